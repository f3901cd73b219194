//! Seeded single runs and the multi-map, multi-planner benchmark suite.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use gridex_agent::{run_episode, Agent, BaselinePlanner, EpisodeConfig, EpisodeMetrics, EpisodeTrace, PolicyPlanner, SelectMode};
use gridex_core::baselines::Baseline;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corpus::{load_corpus, load_map, size_class, MapEntry, SizeClass};
use crate::BenchError;

/// A baseline, or the learned policy acting greedily.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlannerKind {
    Baseline(Baseline),
    Policy,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Baseline(b) => b.name(),
            PlannerKind::Policy => "policy",
        }
    }
}

impl FromStr for PlannerKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "policy" {
            return Ok(PlannerKind::Policy);
        }
        Baseline::ALL.into_iter().find(|b| b.name() == s).map(PlannerKind::Baseline).ok_or_else(|| {
            let names: Vec<&str> = Baseline::ALL.iter().map(|b| b.name()).chain(["policy"]).collect();
            BenchError::Usage(format!("unknown planner '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// Loads the checkpoint if one is given, else a freshly initialized network.
pub fn load_agent(checkpoint: Option<&PathBuf>) -> Result<Agent, BenchError> {
    Ok(match checkpoint {
        Some(p) => Agent::load(p)?,
        None => Agent::new(0)?,
    })
}

/// One episode of `planner` on `map`.
pub fn run_one(
    map: &MapEntry,
    planner: PlannerKind,
    agent: Option<&Agent>,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<(EpisodeMetrics, EpisodeTrace), BenchError> {
    let out = match planner {
        PlannerKind::Baseline(kind) => run_episode(&map.world, &mut BaselinePlanner { kind, seed }, cfg, seed)?,
        PlannerKind::Policy => {
            let agent = agent.ok_or_else(|| BenchError::Usage("the policy planner needs a network".into()))?;
            let mut p = PolicyPlanner::new(agent, cfg.robots, SelectMode::Argmax, seed);
            run_episode(&map.world, &mut p, cfg, seed)?
        }
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub map: String,
    pub class: SizeClass,
    pub free_cells: usize,
    pub planner: PlannerKind,
    pub seed: u64,
    pub steps: usize,
    pub completed: bool,
    pub exploration_rate: f64,
    pub cycles: usize,
    /// Summed over robots.
    pub path_length: f64,
    pub overlap_ratio: f64,
}

impl SuiteRow {
    pub const HEADER: &'static str = "map,size_class,free_cells,planner,seed,steps,completed,exploration_rate,cycles,path_length,overlap_ratio";

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{},{:.3},{:.6}",
            self.map,
            self.class,
            self.free_cells,
            self.planner.name(),
            self.seed,
            self.steps,
            self.completed as u8,
            self.exploration_rate,
            self.cycles,
            self.path_length,
            self.overlap_ratio
        )
    }
}

/// Mean and sample standard deviation of one planner within one size class.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub planner: PlannerKind,
    pub class: SizeClass,
    pub episodes: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub completion: f64,
}

impl Aggregate {
    pub const HEADER: &'static str = "planner,size_class,episodes,mean_steps,std_steps,mean_explo_rate,std_explo_rate,completion";

    fn csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.6},{:.6},{:.4}",
            self.planner.name(),
            self.class,
            self.episodes,
            self.mean_steps,
            self.std_steps,
            self.mean_rate,
            self.std_rate,
            self.completion
        )
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[SuiteRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(PlannerKind, SizeClass)> = rows.iter().map(|r| (r.planner, r.class)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(planner, class)| {
            let sel: Vec<&SuiteRow> = rows.iter().filter(|r| r.planner == planner && r.class == class).collect();
            let steps: Vec<f64> = sel.iter().map(|r| r.steps as f64).collect();
            let rates: Vec<f64> = sel.iter().map(|r| r.exploration_rate).collect();
            let (mean_steps, std_steps) = mean_std(&steps);
            let (mean_rate, std_rate) = mean_std(&rates);
            let completion = sel.iter().filter(|r| r.completed).count() as f64 / sel.len() as f64;
            Aggregate { planner, class, episodes: sel.len(), mean_steps, std_steps, mean_rate, std_rate, completion }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub aggregates: Vec<Aggregate>,
}

impl SuiteReport {
    pub fn rows_csv(&self) -> String {
        let mut s = format!("{}\n", SuiteRow::HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv());
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{}\n", Aggregate::HEADER);
        for a in &self.aggregates {
            let _ = writeln!(s, "{}", a.csv());
        }
        s
    }

    /// Fixed-width table for the terminal.
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<10} {:<7} {:>5} {:>18} {:>17} {:>6}\n", "planner", "class", "n", "steps", "explo rate", "done");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{:<10} {:<7} {:>5} {:>9.1} ± {:>6.1} {:>7.4} ± {:.4} {:>6.2}",
                a.planner.name(),
                a.class.to_string(),
                a.episodes,
                a.mean_steps,
                a.std_steps,
                a.mean_rate,
                a.std_rate,
                a.completion
            );
        }
        s
    }

    /// Writes `suite.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<(), BenchError> {
        let io = |e: std::io::Error| BenchError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("suite.csv"), self.rows_csv()).map_err(io)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()).map_err(io)
    }
}

/// The configured maps: explicit paths first, then the corpus directory.
pub fn resolve_maps(cfg: &RunConfig) -> Result<Vec<MapEntry>, BenchError> {
    let mut maps = cfg.maps.iter().map(|p| load_map(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = &cfg.corpus {
        maps.extend(load_corpus(dir)?);
    }
    if maps.is_empty() {
        return Err(BenchError::Usage("no maps given; use --map or --corpus".into()));
    }
    Ok(maps)
}

/// Runs every (map, planner, seed) combination on the rayon pool.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteReport, BenchError> {
    cfg.validate()?;
    let maps = resolve_maps(cfg)?;
    let planners = cfg.planners.iter().map(|p| p.parse()).collect::<Result<Vec<PlannerKind>, _>>()?;
    let agent = if planners.contains(&PlannerKind::Policy) { Some(load_agent(cfg.checkpoint.as_ref())?) } else { None };
    let ep = cfg.episode();
    let jobs: Vec<(usize, PlannerKind, u64)> = (0..maps.len())
        .flat_map(|m| planners.iter().flat_map(move |&p| cfg.seeds.iter().map(move |&s| (m, p, s))))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(m, planner, seed)| {
            let map = &maps[m];
            let (metrics, _) = run_one(map, planner, agent.as_ref(), &ep, seed)?;
            let free_cells = map.free_cells();
            Ok(SuiteRow {
                map: map.name.clone(),
                class: size_class(free_cells),
                free_cells,
                planner,
                seed,
                steps: metrics.steps_to_completion,
                completed: metrics.completed,
                exploration_rate: metrics.exploration_rate,
                cycles: metrics.cycles,
                path_length: metrics.path_lengths.iter().sum(),
                overlap_ratio: metrics.overlap_ratio,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    rows.sort_by(|a, b| (&a.map, a.planner.name(), a.seed).cmp(&(&b.map, b.planner.name(), b.seed)));
    let aggregates = aggregate(&rows);
    Ok(SuiteReport { rows, aggregates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planner_names() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<PlannerKind>().unwrap(), PlannerKind::Baseline(b));
        }
        assert_eq!("Policy".parse::<PlannerKind>().unwrap(), PlannerKind::Policy);
        assert!(matches!("greedy".parse::<PlannerKind>(), Err(BenchError::Usage(_))));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }
}
