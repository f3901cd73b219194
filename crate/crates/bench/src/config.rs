//! Run configuration: a plain `key = value` file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gridex_agent::{EpisodeConfig, TrainConfig};
use gridex_core::SensorConfig;

use crate::BenchError;

/// Everything the `run`, `suite` and `train` commands need.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub maps: Vec<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub planners: Vec<String>,
    pub robots: usize,
    pub seeds: Vec<u64>,
    /// `None` means the default cap of 4 × diagonal × horizon.
    pub max_steps: Option<usize>,
    pub horizon: usize,
    pub sensor_range: f64,
    pub rays: usize,
    pub cluster_radius: f64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Training updates for `train`.
    pub iterations: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sensor = SensorConfig::default();
        let episode = EpisodeConfig::default();
        Self {
            maps: Vec::new(),
            corpus: None,
            planners: vec!["nearest".into()],
            robots: episode.robots,
            seeds: vec![0],
            max_steps: None,
            horizon: episode.horizon,
            sensor_range: sensor.max_range,
            rays: sensor.ray_count,
            cluster_radius: episode.cluster_radius,
            out: PathBuf::from("out"),
            checkpoint: None,
            iterations: 50,
            train: TrainConfig { lr: 1e-4, ..TrainConfig::default() },
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, BenchError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(BenchError::Usage(format!("config line {}: expected key = value", n + 1)));
        };
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

/// Seed lists: `7`, `1,2,5` or the half-open range `0..20`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, BenchError> {
    let bad = || BenchError::Usage(format!("bad seed list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, BenchError> {
    v.parse().map_err(|_| BenchError::Usage(format!("bad value '{v}' for {key}")))
}

impl RunConfig {
    /// Applies pairs in order; later calls win, so apply the file first and
    /// flags second.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), BenchError> {
        for (k, v) in pairs {
            let t = &mut self.train;
            match k.as_str() {
                "map" | "maps" => self.maps = list(v).into_iter().map(PathBuf::from).collect(),
                "corpus" => self.corpus = Some(PathBuf::from(v)),
                "planner" | "planners" => self.planners = list(v),
                "robots" => self.robots = num(k, v)?,
                "seed" => self.seeds = vec![num(k, v)?],
                "seeds" => self.seeds = parse_seeds(v)?,
                "max_steps" => self.max_steps = if v == "auto" { None } else { Some(num(k, v)?) },
                "horizon" => self.horizon = num(k, v)?,
                "sensor_range" => self.sensor_range = num(k, v)?,
                "rays" => self.rays = num(k, v)?,
                "cluster_radius" => self.cluster_radius = num(k, v)?,
                "out" => self.out = PathBuf::from(v),
                "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
                "iterations" => self.iterations = num(k, v)?,
                "lr" => t.lr = num(k, v)?,
                "discount" => t.discount = num(k, v)?,
                "gae_lambda" => t.gae_lambda = num(k, v)?,
                "c1" => t.c1 = num(k, v)?,
                "c2" => t.c2 = num(k, v)?,
                "c3" => t.c3 = num(k, v)?,
                "clip" => t.clip = num(k, v)?,
                "epochs" => t.epochs = num(k, v)?,
                "chunk" => t.chunk = num(k, v)?,
                "train_max_steps" => t.max_steps = num(k, v)?,
                "a1" => t.a1 = num(k, v)?,
                "a2" => t.a2 = num(k, v)?,
                _ => return Err(BenchError::Usage(format!("unknown config key '{k}'"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() {
            return Err(BenchError::Usage("at least one seed is required".into()));
        }
        if self.planners.is_empty() {
            return Err(BenchError::Usage("at least one planner is required".into()));
        }
        self.episode().validate().map_err(|e| BenchError::Usage(e.to_string()))?;
        self.train_config().validate().map_err(|e| BenchError::Usage(e.to_string()))
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            robots: self.robots,
            horizon: self.horizon,
            max_steps: self.max_steps,
            sensor: SensorConfig { max_range: self.sensor_range, ray_count: self.rays, ..SensorConfig::default() },
            cluster_radius: self.cluster_radius,
            ..EpisodeConfig::default()
        }
    }

    /// Training settings with the shared robot count, horizon and first seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { robots: self.robots, horizon: self.horizon, seed: self.seeds.first().copied().unwrap_or(0), ..self.train.clone() }
    }
}
