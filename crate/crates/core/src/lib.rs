//! Grid-world substrate for multi-robot active mapping.
//!
//! Ground-truth worlds with ray-cast sensing, the shared occupancy map,
//! frontier detection and clustering, fast-marching geodesics, linear
//! assignment and the classical long-term goal planners.

pub mod assign;
pub mod baselines;
pub mod cell;
pub mod frontier;
pub mod geodesy;
pub mod occupancy;
pub mod raycast;
pub mod stacks;
pub mod world;

pub use cell::{Cell, GridDims};
pub use frontier::{cluster_frontiers, detect_frontiers, FrontierClusters};
pub use geodesy::{extract_path, fmm_field, geodesic_distance, waypoint_action, DistanceField};
pub use occupancy::{integrate_scan, Knowledge, OccupancyGrid};
pub use stacks::{build_stacks, Channel, MapStack, ObservationStack, PrivilegeStack};
pub use world::{
    load_world, sense, spawn_robots, step, Action, DepthScan, GroundTruthMap, Heading, RobotState,
    SensorConfig, Terrain,
};
