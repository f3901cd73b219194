//! The perception → goal → path → act loop shared by training, evaluation
//! and the baselines.

use std::collections::HashMap;
use std::f64::consts::PI;

use gridex_core::baselines::{Baseline, Scene};
use gridex_core::frontier::DEFAULT_CLUSTER_RADIUS;
use gridex_core::geodesy::fmm_known_free;
use gridex_core::world::{spawn_robots_within, DEFAULT_SPAWN_RADIUS, HEADING_COUNT};
use gridex_core::{
    build_stacks, cluster_frontiers, detect_frontiers, extract_path, integrate_scan, sense, step, waypoint_action, Action, Cell,
    DistanceField, FrontierClusters, GridDims, GroundTruthMap, Heading, OccupancyGrid, RobotState, SensorConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::policy::{Agent, SelectMode};
use crate::topograph::History;
use crate::AgentError;

/// Low-level steps per planning cycle.
pub const DEFAULT_HORIZON: usize = 15;
/// Exploration rate at which an episode counts as complete.
pub const COMPLETION_RATE: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub robots: usize,
    pub horizon: usize,
    /// Step cap; `None` uses `4 × map diagonal × horizon`.
    pub max_steps: Option<usize>,
    pub sensor: SensorConfig,
    pub cluster_radius: f64,
    pub spawn_radius: f64,
    pub completion: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            robots: 2,
            horizon: DEFAULT_HORIZON,
            max_steps: None,
            sensor: SensorConfig::default(),
            cluster_radius: DEFAULT_CLUSTER_RADIUS,
            spawn_radius: DEFAULT_SPAWN_RADIUS,
            completion: COMPLETION_RATE,
        }
    }
}

impl EpisodeConfig {
    pub fn step_cap(&self, world: &GroundTruthMap) -> usize {
        self.max_steps.unwrap_or_else(|| default_step_cap(world, self.horizon))
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.robots == 0 || self.horizon == 0 {
            return Err(AgentError::Config("robots and horizon must be positive".into()));
        }
        if !(self.cluster_radius > 0.0 && self.sensor.max_range >= 1.0 && self.sensor.ray_count >= 1) {
            return Err(AgentError::Config("sensor range, ray count and cluster radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.completion) {
            return Err(AgentError::Config(format!("completion rate {} outside [0, 1]", self.completion)));
        }
        Ok(())
    }
}

pub fn default_step_cap(world: &GroundTruthMap, horizon: usize) -> usize {
    (4.0 * world.diagonal() * horizon as f64).ceil() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    /// Environment steps taken until termination.
    pub steps_to_completion: usize,
    pub completed: bool,
    pub exploration_rate: f64,
    /// Exploration rate at the start and after every planning cycle.
    pub curve: Vec<f64>,
    /// Distance driven per robot, in cells.
    pub path_lengths: Vec<f64>,
    /// Fraction of visited cells visited by at least two robots.
    pub overlap_ratio: f64,
    pub cycles: usize,
}

/// What a renderer needs to draw an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub grid: OccupancyGrid,
    pub trails: Vec<Vec<Cell>>,
    pub goals: Vec<Vec<Option<Cell>>>,
}

/// Everything a goal planner may look at for one decision. The ground truth
/// is present for critics only; planners that act must not read it.
pub struct DecisionView<'a> {
    pub world: &'a GroundTruthMap,
    pub grid: &'a OccupancyGrid,
    pub robots: &'a [RobotState],
    pub frontiers: &'a [Cell],
    pub clusters: &'a FrontierClusters,
    pub trails: &'a [Vec<Cell>],
    pub sensor_range: f64,
    pub cycle: usize,
}

pub trait GoalPlanner {
    fn name(&self) -> String;
    fn plan(&mut self, view: &DecisionView) -> Result<Vec<Option<Cell>>, AgentError>;
}

pub struct BaselinePlanner {
    pub kind: Baseline,
    pub seed: u64,
}

impl GoalPlanner for BaselinePlanner {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn plan(&mut self, view: &DecisionView) -> Result<Vec<Option<Cell>>, AgentError> {
        let scene = Scene::new(view.grid, view.robots, view.clusters, view.sensor_range);
        Ok(self.kind.plan(&scene, self.seed.wrapping_add(view.cycle as u64)))
    }
}

/// Runs the learned policy, keeping its own history of poses and goals.
pub struct PolicyPlanner<'a> {
    agent: &'a Agent,
    history: History,
    mode: SelectMode,
    rng: ChaCha8Rng,
}

impl<'a> PolicyPlanner<'a> {
    pub fn new(agent: &'a Agent, robots: usize, mode: SelectMode, seed: u64) -> Self {
        Self { agent, history: History::new(robots), mode, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl GoalPlanner for PolicyPlanner<'_> {
    fn name(&self) -> String {
        "policy".into()
    }

    fn plan(&mut self, view: &DecisionView) -> Result<Vec<Option<Cell>>, AgentError> {
        let (obs, _) = build_stacks(view.grid, view.world, view.robots, view.frontiers, view.trails)?;
        let d = self.agent.decide(&obs, view.robots, view.clusters, view.grid, &self.history, self.mode, &mut self.rng)?;
        let counts = view.clusters.counts();
        let goals: Vec<Option<(Cell, usize)>> =
            d.assignment.choices.iter().map(|&c| Some((view.clusters.centers[c], counts[c]))).collect();
        self.history.record(view.robots, &goals, &d.features);
        Ok(d.assignment.goals.into_iter().map(Some).collect())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.x.abs_diff(b.x).max(a.y.abs_diff(b.y))
}

/// Drives one robot along a descent path to its goal for one cycle.
///
/// Normally the face-then-forward rule toward the next path cell. When a
/// forward move is blocked (the continuous position can sit off the cell
/// center), the follower picks the heading whose one-step destination is
/// known free and lowest in the goal's distance field, turns to it and
/// drives.
struct Follower {
    goal: Cell,
    field: DistanceField,
    path: Vec<Cell>,
    next: usize,
    recovery: Option<Heading>,
    blocked: Vec<Heading>,
    finished: bool,
}

impl Follower {
    fn new(grid: &OccupancyGrid, robot: &RobotState, goal: Cell) -> Option<Self> {
        let field = fmm_known_free(grid, &[goal]).ok()?;
        let path = extract_path(&field, robot.cell()).ok()?;
        Some(Self { goal, field, path, next: 1, recovery: None, blocked: Vec::new(), finished: false })
    }

    fn active(&self) -> bool {
        !self.finished
    }

    fn action(&mut self, grid: &OccupancyGrid, robot: &RobotState) -> Action {
        let cell = robot.cell();
        if cell == self.goal {
            self.finished = true;
        }
        if self.finished {
            return Action::Stay;
        }
        if !self.field.value(cell).is_finite() {
            match fmm_known_free(grid, &[self.goal]) {
                Ok(f) if f.value(cell).is_finite() => self.field = f,
                _ => {
                    self.finished = true;
                    return Action::Stay;
                }
            }
            self.next = self.path.len();
        }
        if let Some(k) = self.path.iter().skip(self.next).position(|&c| c == cell) {
            self.next += k + 1;
        } else if self.next >= self.path.len() || chebyshev(cell, self.path[self.next]) > 1 {
            match extract_path(&self.field, cell) {
                Ok(p) => {
                    self.path = p;
                    self.next = 1;
                }
                Err(_) => {
                    self.finished = true;
                    return Action::Stay;
                }
            }
        }
        if let Some(h) = self.recovery {
            if robot.heading == h {
                return Action::Forward;
            }
            let diff = wrap_angle(h.radians() - robot.heading.radians());
            return if diff > 0.0 || (diff.abs() - PI).abs() < 1e-9 { Action::RotateLeft } else { Action::RotateRight };
        }
        match self.path.get(self.next) {
            Some(&wp) => waypoint_action(robot, wp),
            None => Action::Stay,
        }
    }

    fn observe(&mut self, grid: &OccupancyGrid, action: Action, before: &RobotState, after: &RobotState) {
        if action != Action::Forward {
            return;
        }
        if before.position() == after.position() {
            self.blocked.push(before.heading);
            self.recovery = self.recovery_heading(grid, before);
            if self.recovery.is_none() {
                self.finished = true;
            }
        } else {
            self.blocked.clear();
            self.recovery = None;
        }
    }

    fn recovery_heading(&self, grid: &OccupancyGrid, robot: &RobotState) -> Option<Heading> {
        let src = robot.cell();
        let mut best: Option<(f64, f64, Heading)> = None;
        for k in 0..HEADING_COUNT {
            let h = Heading::new(k);
            if self.blocked.contains(&h) {
                continue;
            }
            let th = h.radians();
            let Some(dest) = Cell::containing(robot.x + th.cos(), robot.y + th.sin()) else { continue };
            if dest == src || !grid.is_free(dest) {
                continue;
            }
            if dest.x != src.x && dest.y != src.y && !grid.is_free(Cell::new(dest.x, src.y)) && !grid.is_free(Cell::new(src.x, dest.y)) {
                continue;
            }
            let v = self.field.value(dest);
            if !v.is_finite() {
                continue;
            }
            let turn = wrap_angle(th - robot.heading.radians()).abs();
            if best.is_none_or(|(bv, bt, _)| v < bv - 1e-12 || (v <= bv + 1e-12 && turn < bt)) {
                best = Some((v, turn, h));
            }
        }
        best.map(|(_, _, h)| h)
    }
}

/// Mutable state of one exploration episode.
pub struct Episode<'w> {
    world: &'w GroundTruthMap,
    cfg: EpisodeConfig,
    cap: usize,
    grid: OccupancyGrid,
    robots: Vec<RobotState>,
    trails: Vec<Vec<Cell>>,
    goals: Vec<Vec<Option<Cell>>>,
    path_lengths: Vec<f64>,
    curve: Vec<f64>,
    steps: usize,
}

impl<'w> Episode<'w> {
    pub fn new(world: &'w GroundTruthMap, cfg: &EpisodeConfig, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let robots = spawn_robots_within(world, cfg.robots, seed, cfg.spawn_radius)?;
        Ok(Self::with_robots(world, cfg, robots))
    }

    /// Starts from given poses, which must lie in free cells.
    pub fn with_robots(world: &'w GroundTruthMap, cfg: &EpisodeConfig, robots: Vec<RobotState>) -> Self {
        let mut ep = Self {
            world,
            cfg: cfg.clone(),
            cap: cfg.step_cap(world),
            grid: OccupancyGrid::for_world(world),
            trails: robots.iter().map(|r| vec![r.cell()]).collect(),
            path_lengths: vec![0.0; robots.len()],
            robots,
            goals: Vec::new(),
            curve: Vec::new(),
            steps: 0,
        };
        ep.sense_all();
        ep.curve.push(ep.exploration_rate());
        ep
    }

    fn sense_all(&mut self) {
        for r in &self.robots {
            let scan = sense(self.world, r, &self.cfg.sensor);
            integrate_scan(&mut self.grid, r, &scan);
        }
    }

    pub fn world(&self) -> &GroundTruthMap {
        self.world
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn trails(&self) -> &[Vec<Cell>] {
        &self.trails
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_cap(&self) -> usize {
        self.cap
    }

    pub fn cycles(&self) -> usize {
        self.goals.len()
    }

    pub fn explored_free(&self) -> usize {
        self.grid.explored_free_in(self.world)
    }

    pub fn exploration_rate(&self) -> f64 {
        self.grid.exploration_rate(self.world)
    }

    pub fn is_complete(&self) -> bool {
        self.exploration_rate() >= self.cfg.completion
    }

    pub fn out_of_steps(&self) -> bool {
        self.steps >= self.cap
    }

    /// Current frontier cells and their clusters.
    pub fn frontiers(&self) -> (Vec<Cell>, FrontierClusters) {
        let pts = detect_frontiers(&self.grid);
        let clusters = cluster_frontiers(&pts, self.cfg.cluster_radius);
        (pts, clusters)
    }

    pub fn view<'a>(&'a self, frontiers: &'a [Cell], clusters: &'a FrontierClusters) -> DecisionView<'a> {
        DecisionView {
            world: self.world,
            grid: &self.grid,
            robots: &self.robots,
            frontiers,
            clusters,
            trails: &self.trails,
            sensor_range: self.cfg.sensor.max_range,
            cycle: self.goals.len(),
        }
    }

    /// Follows `goals` for up to one planning horizon. The cycle ends early
    /// once every robot has reached its goal or given up on it, on
    /// completion, or at the step cap. At least one step is taken when any
    /// budget remains, so planners that return no goals still advance time.
    /// Returns the number of steps taken.
    pub fn execute(&mut self, goals: &[Option<Cell>]) -> usize {
        assert_eq!(goals.len(), self.robots.len(), "one goal slot per robot");
        self.goals.push(goals.to_vec());
        let mut followers: Vec<Option<Follower>> = goals
            .iter()
            .zip(&self.robots)
            .map(|(g, r)| g.and_then(|g| Follower::new(&self.grid, r, g)))
            .collect();
        let mut taken = 0;
        while taken < self.cfg.horizon && !self.out_of_steps() {
            let actions: Vec<Action> = followers
                .iter_mut()
                .zip(&self.robots)
                .map(|(f, r)| f.as_mut().map_or(Action::Stay, |f| f.action(&self.grid, r)))
                .collect();
            let any_active = followers.iter().flatten().any(Follower::active);
            if !any_active && taken > 0 {
                break;
            }
            for (i, &a) in actions.iter().enumerate() {
                let before = self.robots[i];
                let after = step(self.world, &before, a);
                if let Some(f) = followers[i].as_mut() {
                    f.observe(&self.grid, a, &before, &after);
                }
                let (dx, dy) = (after.x - before.x, after.y - before.y);
                self.path_lengths[i] += (dx * dx + dy * dy).sqrt();
                if after.cell() != before.cell() {
                    self.trails[i].push(after.cell());
                }
                self.robots[i] = after;
            }
            self.sense_all();
            self.steps += 1;
            taken += 1;
            if !any_active || self.is_complete() {
                break;
            }
        }
        self.curve.push(self.exploration_rate());
        taken
    }

    pub fn overlap_ratio(&self) -> f64 {
        let mut visits: HashMap<Cell, usize> = HashMap::new();
        for trail in &self.trails {
            let mut cells = trail.clone();
            cells.sort();
            cells.dedup();
            for c in cells {
                *visits.entry(c).or_default() += 1;
            }
        }
        if visits.is_empty() {
            return 0.0;
        }
        visits.values().filter(|&&n| n >= 2).count() as f64 / visits.len() as f64
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        EpisodeMetrics {
            steps_to_completion: self.steps,
            completed: self.is_complete(),
            exploration_rate: self.exploration_rate(),
            curve: self.curve.clone(),
            path_lengths: self.path_lengths.clone(),
            overlap_ratio: self.overlap_ratio(),
            cycles: self.goals.len(),
        }
    }

    pub fn trace(&self) -> EpisodeTrace {
        EpisodeTrace { grid: self.grid.clone(), trails: self.trails.clone(), goals: self.goals.clone() }
    }
}

/// Plays one episode to completion, frontier exhaustion or the step cap.
pub fn run_episode(
    world: &GroundTruthMap,
    planner: &mut dyn GoalPlanner,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<(EpisodeMetrics, EpisodeTrace), AgentError> {
    let mut ep = Episode::new(world, cfg, seed)?;
    while !ep.out_of_steps() && !ep.is_complete() {
        let (pts, clusters) = ep.frontiers();
        if clusters.is_empty() {
            break;
        }
        let goals = planner.plan(&ep.view(&pts, &clusters))?;
        if goals.len() != ep.robots().len() {
            return Err(AgentError::Config(format!("planner returned {} goals for {} robots", goals.len(), ep.robots().len())));
        }
        ep.execute(&goals);
    }
    Ok((ep.metrics(), ep.trace()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridex_core::load_world;

    fn room(w: usize, h: usize) -> GroundTruthMap {
        let mut s = String::new();
        for y in 0..h {
            for x in 0..w {
                s.push(if x == 0 || y == 0 || x == w - 1 || y == h - 1 { '#' } else { '.' });
            }
            s.push('\n');
        }
        load_world(&s).unwrap()
    }

    fn two_rooms() -> GroundTruthMap {
        let rows = [
            "##########################",
            "#..........#.............#",
            "#..........#.............#",
            "#..........#.............#",
            "#........................#",
            "#..........#.............#",
            "#..........#######..######",
            "#..........#.............#",
            "#..........#.............#",
            "##########################",
        ];
        load_world(&rows.join("\n")).unwrap()
    }

    #[test]
    fn tiny_room_completes_with_nearest_frontier() {
        let world = room(16, 16);
        let cfg = EpisodeConfig { robots: 1, sensor: SensorConfig { max_range: 4.0, ..SensorConfig::default() }, ..EpisodeConfig::default() };
        let mut p = BaselinePlanner { kind: Baseline::Nearest, seed: 0 };
        let (m, _) = run_episode(&world, &mut p, &cfg, 3).unwrap();
        assert!(m.completed, "{m:?}");
        assert!(m.exploration_rate >= 0.99);
        assert!(m.curve.windows(2).all(|w| w[0] <= w[1]));
        assert!(m.steps_to_completion > 0);
    }

    #[test]
    fn zero_step_cap_reports_initial_coverage() {
        let world = two_rooms();
        let cfg = EpisodeConfig { max_steps: Some(0), ..EpisodeConfig::default() };
        let mut p = BaselinePlanner { kind: Baseline::Utility, seed: 0 };
        let (m, _) = run_episode(&world, &mut p, &cfg, 1).unwrap();
        assert_eq!(m.steps_to_completion, 0);
        assert_eq!(m.curve.len(), 1);
        assert_eq!(m.exploration_rate, m.curve[0]);
        assert!(m.exploration_rate > 0.0);
    }

    #[test]
    fn episodes_are_reproducible() {
        let world = two_rooms();
        let cfg = EpisodeConfig { sensor: SensorConfig { max_range: 5.0, ..SensorConfig::default() }, ..EpisodeConfig::default() };
        for kind in Baseline::ALL {
            let run = |seed| run_episode(&world, &mut BaselinePlanner { kind, seed: 7 }, &cfg, seed).unwrap();
            let (a, ta) = run(4);
            let (b, tb) = run(4);
            assert_eq!(a, b);
            assert_eq!(ta, tb);
            assert!(a.completed, "{kind:?}: {a:?}");
        }
    }

    #[test]
    fn robots_stay_in_free_space_and_trails_are_connected() {
        let world = two_rooms();
        let cfg = EpisodeConfig { robots: 3, sensor: SensorConfig { max_range: 5.0, ..SensorConfig::default() }, ..EpisodeConfig::default() };
        let (m, trace) = run_episode(&world, &mut BaselinePlanner { kind: Baseline::Voronoi, seed: 0 }, &cfg, 2).unwrap();
        for trail in &trace.trails {
            assert!(trail.iter().all(|&c| world.is_free(c)));
            assert!(trail.windows(2).all(|w| chebyshev(w[0], w[1]) == 1));
        }
        assert!((0.0..=1.0).contains(&m.overlap_ratio));
        assert_eq!(m.path_lengths.len(), 3);
    }

    #[test]
    fn blocked_forward_recovers() {
        let world = two_rooms();
        let cfg = EpisodeConfig { robots: 1, ..EpisodeConfig::default() };
        // Off-center pose beside the doorway, facing the wall.
        let start = RobotState { id: 0, x: 10.4, y: 3.4, heading: Heading::new(0) };
        let ep = Episode::with_robots(&world, &cfg, vec![start]);
        let grid = ep.grid();
        let goal = Cell::new(11, 4);
        let mut f = Follower::new(grid, &start, goal).unwrap();
        assert_eq!(step(&world, &start, Action::Forward), start);
        f.observe(grid, Action::Forward, &start, &start);
        let h = f.recovery.unwrap();
        assert_ne!(h, start.heading);
        let th = h.radians();
        let dest = Cell::containing(start.x + th.cos(), start.y + th.sin()).unwrap();
        assert!(world.is_free(dest));
        assert!(f.field.value(dest) < f.field.value(start.cell()));
        let mut r = start;
        for _ in 0..12 {
            let a = f.action(grid, &r);
            let next = step(&world, &r, a);
            f.observe(grid, a, &r, &next);
            r = next;
        }
        assert_eq!(r.cell(), goal);
    }

    #[test]
    fn unreachable_goal_holds_position() {
        let world = two_rooms();
        let cfg = EpisodeConfig { robots: 1, ..EpisodeConfig::default() };
        let start = RobotState::at_cell(0, Cell::new(2, 2), Heading::new(0));
        let mut ep = Episode::with_robots(&world, &cfg, vec![start]);
        let taken = ep.execute(&[Some(Cell::new(20, 8))]);
        assert_eq!(taken, 1);
        assert_eq!(ep.robots()[0], start);
    }
}
