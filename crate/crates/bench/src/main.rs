use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridex_agent::{gradient_battery, Trainer, BATTERY_TOLERANCE};
use gridex_bench::suite::{load_agent, resolve_maps};
use gridex_bench::{parse_pairs, read_trace, run_one, run_suite, write_ppm, write_trace, BenchError, PlannerKind, RunConfig};

#[derive(Parser)]
#[command(name = "gridex", version, about = "Multi-robot grid exploration workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one episode and save its trace.
    Run(Flags),
    /// Benchmark planners over maps and seeds; writes suite.csv and summary.csv.
    Suite(Flags),
    /// Train the policy with PPO; writes train_log.csv and a checkpoint.
    Train(Flags),
    /// Turn a saved trace into a PPM image.
    Render {
        trace: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the finite-difference gradient battery.
    Gradcheck(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// Map file; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    map: Vec<PathBuf>,
    /// Directory of .txt maps.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Planner name(s): nearest, utility, voronoi, coscan, mtsp, policy.
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed list: `1,2,3` or `0..20`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory (or image path for render).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy weights to load, or for train to write.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Flags {
    fn pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        put("map", (!self.map.is_empty()).then(|| paths(&self.map)));
        put("corpus", self.corpus.as_ref().map(|p| p.display().to_string()));
        put("planner", self.planner.clone());
        put("robots", self.robots.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("seeds", self.seeds.clone());
        put("max_steps", self.max_steps.map(|v| v.to_string()));
        put("horizon", self.horizon.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()));
        m
    }

    fn config(&self) -> Result<RunConfig, BenchError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| BenchError::Usage(format!("config {}: {e}", path.display())))?;
            cfg.apply(&parse_pairs(&text)?)?;
        }
        cfg.apply(&self.pairs())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |e| BenchError::Io(format!("{}: {e}", path.display()))
}

fn run(flags: &Flags) -> Result<(), BenchError> {
    let cfg = flags.config()?;
    let maps = resolve_maps(&cfg)?;
    let map = &maps[0];
    let planner: PlannerKind = cfg.planners[0].parse()?;
    let agent = if planner == PlannerKind::Policy { Some(load_agent(cfg.checkpoint.as_ref())?) } else { None };
    let seed = cfg.seeds[0];
    let (m, trace) = run_one(map, planner, agent.as_ref(), &cfg.episode(), seed)?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let path = cfg.out.join(format!("{}_{}_{seed}.trace", map.name, planner.name()));
    std::fs::write(&path, write_trace(&trace)).map_err(io_err(&path))?;
    println!("map {} planner {} seed {seed}", map.name, planner.name());
    println!("steps {} completed {} exploration_rate {:.4} cycles {}", m.steps_to_completion, m.completed, m.exploration_rate, m.cycles);
    let lengths: Vec<String> = m.path_lengths.iter().map(|l| format!("{l:.1}")).collect();
    println!("path_lengths {} overlap_ratio {:.4}", lengths.join(" "), m.overlap_ratio);
    println!("trace {}", path.display());
    Ok(())
}

fn suite(flags: &Flags) -> Result<(), BenchError> {
    let cfg = flags.config()?;
    let report = run_suite(&cfg)?;
    report.write(&cfg.out)?;
    print!("{}", report.summary_table());
    println!("{} episodes written to {}", report.rows.len(), cfg.out.join("suite.csv").display());
    Ok(())
}

fn train(flags: &Flags) -> Result<(), BenchError> {
    let cfg = flags.config()?;
    let maps = resolve_maps(&cfg)?;
    let worlds: Vec<_> = maps.into_iter().map(|m| m.world).collect();
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("policy.ckpt"));
    let agent = load_agent(ckpt.exists().then_some(&ckpt))?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let log_path = cfg.out.join("train_log.csv");
    let log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut trainer = Trainer::new(agent, cfg.train_config())?;
    let rows = trainer.train(&worlds, cfg.iterations, log)?;
    trainer.agent.save(&ckpt)?;
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        println!("mean steps {:.1} -> {:.1}, mi estimate {:.4} -> {:.4}", first.mean_steps, last.mean_steps, first.report.mi_estimate, last.report.mi_estimate);
    }
    println!("log {} checkpoint {}", log_path.display(), ckpt.display());
    Ok(())
}

fn render(trace: &PathBuf, flags: &Flags) -> Result<(), BenchError> {
    let text = std::fs::read_to_string(trace).map_err(|e| BenchError::Usage(format!("trace {}: {e}", trace.display())))?;
    let t = read_trace(&text)?;
    let out = flags.out.clone().unwrap_or_else(|| trace.with_extension("ppm"));
    write_ppm(&t, &out)?;
    println!("image {}", out.display());
    Ok(())
}

fn gradcheck() -> Result<(), BenchError> {
    let results = gradient_battery()?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passes() { "ok" } else { "FAIL" };
        println!("{:<34} {:>5} entries  max rel error {:.3e}  {verdict}", r.name, r.report.checked, r.report.max_rel_error);
        failed += usize::from(!r.passes());
    }
    if failed > 0 {
        return Err(BenchError::Failed(format!("{failed} gradient checks exceeded {BATTERY_TOLERANCE:e}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Run(f) => run(f),
        Command::Suite(f) => suite(f),
        Command::Train(f) => train(f),
        Command::Render { trace, flags } => render(trace, flags),
        Command::Gradcheck(_) => gradcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridex: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
