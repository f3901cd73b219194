//! Benchmark harness: map corpus, seeded episode runs, the multi-planner
//! suite with CSV reports, episode traces and PPM rendering.

pub mod config;
pub mod corpus;
pub mod render;
pub mod suite;
pub mod trace;

pub use config::{parse_pairs, parse_seeds, RunConfig};
pub use corpus::{bundled_corpus_dir, load_corpus, load_map, size_class, MapEntry, SizeClass};
pub use render::{render_ppm, write_ppm};
pub use suite::{run_one, run_suite, Aggregate, PlannerKind, SuiteReport, SuiteRow};
pub use trace::{read_trace, write_trace};

use gridex_agent::AgentError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Bad flags, config, map files or names; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{0}")]
    Failed(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            _ => 1,
        }
    }
}
