//! The learned exploration agent: topological graphs over the shared map,
//! the graph-matching goal policy with its asymmetric critic and
//! mutual-information head, the episode engine and PPO training.

pub mod battery;
pub mod episode;
pub mod policy;
pub mod topograph;
pub mod training;

pub use battery::{gradient_battery, BatteryResult, BATTERY_TOLERANCE};
pub use episode::{run_episode, BaselinePlanner, Episode, EpisodeConfig, EpisodeMetrics, EpisodeTrace, GoalPlanner, PolicyPlanner};
pub use policy::{Agent, Decision, GoalAssignment, PolicyNet, SelectMode};
pub use topograph::{build_graph_set, History, TopoGraphSet, TopoNode};
pub use training::{gae, ppo_update, reward, rollout, LossReport, RolloutBuffer, TrainConfig, Trainer};

use gridex_core::geodesy::GeodesyError;
use gridex_core::stacks::StackError;
use gridex_core::world::WorldError;
use gridex_neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error("no frontier clusters to choose from")]
    NoFrontiers,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
