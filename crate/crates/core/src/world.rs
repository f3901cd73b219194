//! Ground-truth grid world, robot kinematics and ray-cast sensing.
//!
//! The world is a static free/obstacle grid. Robots carry a continuous
//! position in cell units and a heading quantized to [`ROTATION_STEP`].
//! Sensing casts omnidirectional rays by default and reports the first
//! obstacle cell along each ray.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cell::{Cell, GridDims};
use crate::raycast::supercover;

/// Number of distinct headings (30° rotation step).
pub const HEADING_COUNT: u8 = 12;
/// Rotation step in radians.
pub const ROTATION_STEP: f64 = TAU / HEADING_COUNT as f64;
/// Default spawn radius in cells.
pub const DEFAULT_SPAWN_RADIUS: f64 = 6.0;
/// Default meters per cell.
pub const DEFAULT_CELL_SIZE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("unknown map character {ch:?} at line {line}, column {column}")]
    Format { line: usize, column: usize, ch: char },
    #[error("map row {line} has length {found}, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("map contains no free cells")]
    EmptyWorld,
    #[error("cannot place {requested} robots within radius {radius} (found {available} candidate cells)")]
    Spawn {
        requested: usize,
        available: usize,
        radius: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terrain {
    Free,
    Obstacle,
}

/// Static ground truth: the privileged view of the environment.
#[derive(Clone, Debug)]
pub struct GroundTruthMap {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<Terrain>,
    component: Vec<bool>,
    component_size: usize,
    spawn_hints: Vec<Cell>,
}

impl GridDims for GroundTruthMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl GroundTruthMap {
    /// Builds a world from a row-major terrain grid. The border is padded with
    /// obstacles when it is not already closed.
    pub fn from_cells(
        width: usize,
        height: usize,
        cells: Vec<Terrain>,
        spawn_hints: Vec<Cell>,
    ) -> Result<Self, WorldError> {
        assert_eq!(cells.len(), width * height, "terrain length mismatch");
        let closed = (0..width).all(|x| {
            cells[x] == Terrain::Obstacle && cells[(height - 1) * width + x] == Terrain::Obstacle
        }) && (0..height).all(|y| {
            cells[y * width] == Terrain::Obstacle && cells[y * width + width - 1] == Terrain::Obstacle
        });
        let (width, height, cells, spawn_hints) = if closed {
            (width, height, cells, spawn_hints)
        } else {
            let (w, h) = (width + 2, height + 2);
            let mut padded = vec![Terrain::Obstacle; w * h];
            for y in 0..height {
                for x in 0..width {
                    padded[(y + 1) * w + x + 1] = cells[y * width + x];
                }
            }
            let hints = spawn_hints
                .into_iter()
                .map(|c| Cell::new(c.x + 1, c.y + 1))
                .collect();
            (w, h, padded, hints)
        };
        if !cells.contains(&Terrain::Free) {
            return Err(WorldError::EmptyWorld);
        }
        let mut map = Self {
            width,
            height,
            cell_size: DEFAULT_CELL_SIZE,
            cells,
            component: Vec::new(),
            component_size: 0,
            spawn_hints,
        };
        map.compute_component();
        Ok(map)
    }

    fn compute_component(&mut self) {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut best: Option<(usize, usize)> = None; // (label, size)
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if self.cells[start] != Terrain::Free || label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            let mut size = 0;
            while let Some(i) = queue.pop_front() {
                size += 1;
                for nb in self.neighbors4(self.cell_at(i)) {
                    let j = self.index(nb);
                    if self.cells[j] == Terrain::Free && label[j] == usize::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            // strict comparison keeps the first (row-major) component on ties
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((next, size));
            }
            next += 1;
        }
        let (lbl, size) = best.expect("at least one free cell");
        self.component = label.iter().map(|&l| l == lbl).collect();
        self.component_size = size;
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn with_cell_size(mut self, cell_size: f64) -> Self {
        self.cell_size = cell_size;
        self
    }

    pub fn terrain(&self, c: Cell) -> Terrain {
        if self.contains(c) {
            self.cells[self.index(c)]
        } else {
            Terrain::Obstacle
        }
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.terrain(c) == Terrain::Free
    }

    /// True when `c` belongs to the largest 4-connected free region.
    pub fn in_free_component(&self, c: Cell) -> bool {
        self.contains(c) && self.component[self.index(c)]
    }

    /// Number of cells in the largest free region.
    pub fn free_component_size(&self) -> usize {
        self.component_size
    }

    pub fn free_component_cells(&self) -> Vec<Cell> {
        (0..self.len())
            .filter(|&i| self.component[i])
            .map(|i| self.cell_at(i))
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|&&t| t == Terrain::Free).count()
    }

    /// Cells marked `S` in the source text.
    pub fn spawn_hints(&self) -> &[Cell] {
        &self.spawn_hints
    }
}

/// Random closed world with rectangular obstacle blocks covering roughly
/// `obstacle_fraction` of the interior. Used by tests and benchmarks.
pub fn random_world(width: usize, height: usize, obstacle_fraction: f64, seed: u64) -> GroundTruthMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![Terrain::Free; width * height];
    for y in 0..height {
        for x in 0..width {
            if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                cells[y * width + x] = Terrain::Obstacle;
            }
        }
    }
    let interior = ((width - 2) * (height - 2)) as f64;
    let target = (obstacle_fraction * interior) as usize;
    let mut placed = 0;
    let mut guard = 0;
    while placed < target && guard < 10_000 {
        guard += 1;
        let bw = rng.gen_range(1..=(width / 6).max(1));
        let bh = rng.gen_range(1..=(height / 6).max(1));
        let x0 = rng.gen_range(1..width - 1);
        let y0 = rng.gen_range(1..height - 1);
        for y in y0..(y0 + bh).min(height - 1) {
            for x in x0..(x0 + bw).min(width - 1) {
                let i = y * width + x;
                if cells[i] == Terrain::Free {
                    cells[i] = Terrain::Obstacle;
                    placed += 1;
                }
            }
        }
    }
    GroundTruthMap::from_cells(width, height, cells, Vec::new()).expect("random world keeps free cells")
}

/// Parses the plain-text map format: `#` obstacle, `.` free, `S` free spawn hint.
pub fn load_world(text: &str) -> Result<GroundTruthMap, WorldError> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .collect::<Vec<_>>();
    let last = rows.iter().rposition(|r| !r.is_empty()).map_or(0, |i| i + 1);
    let rows = &rows[..last];
    if rows.is_empty() {
        return Err(WorldError::EmptyWorld);
    }
    let width = rows[0].chars().count();
    let mut cells = Vec::with_capacity(width * rows.len());
    let mut hints = Vec::new();
    for (y, row) in rows.iter().enumerate() {
        let mut found = 0;
        for (x, ch) in row.chars().enumerate() {
            let t = match ch {
                '#' => Terrain::Obstacle,
                '.' => Terrain::Free,
                'S' => {
                    hints.push(Cell::new(x, y));
                    Terrain::Free
                }
                other => {
                    return Err(WorldError::Format {
                        line: y + 1,
                        column: x + 1,
                        ch: other,
                    })
                }
            };
            cells.push(t);
            found += 1;
        }
        if found != width {
            return Err(WorldError::RaggedRows {
                line: y + 1,
                expected: width,
                found,
            });
        }
    }
    GroundTruthMap::from_cells(width, rows.len(), cells, hints)
}

/// Quantized heading: index `k` means angle `k * ROTATION_STEP`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Heading(u8);

impl Heading {
    pub fn new(index: u8) -> Self {
        Self(index % HEADING_COUNT)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0 as f64 * ROTATION_STEP
    }

    pub fn left(self) -> Self {
        Self((self.0 + 1) % HEADING_COUNT)
    }

    pub fn right(self) -> Self {
        Self((self.0 + HEADING_COUNT - 1) % HEADING_COUNT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: Heading,
}

impl RobotState {
    pub fn at_cell(id: usize, cell: Cell, heading: Heading) -> Self {
        Self {
            id,
            x: cell.x as f64,
            y: cell.y as f64,
            heading,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell::containing(self.x, self.y).expect("robot position inside grid")
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Low-level robot actions. `RotateLeft` increases the heading angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    RotateLeft,
    RotateRight,
    Stay,
}

/// Applies one low-level action. Blocked forward moves leave the state unchanged.
///
/// A forward move is blocked when the destination cell is an obstacle, or when
/// it changes both row and column and both flanking cells are obstacles.
pub fn step(world: &GroundTruthMap, state: &RobotState, action: Action) -> RobotState {
    let mut next = *state;
    match action {
        Action::Stay => {}
        Action::RotateLeft => next.heading = state.heading.left(),
        Action::RotateRight => next.heading = state.heading.right(),
        Action::Forward => {
            let th = state.heading.radians();
            let nx = state.x + th.cos();
            let ny = state.y + th.sin();
            let Some(dest) = Cell::containing(nx, ny) else {
                return next;
            };
            if !world.is_free(dest) {
                return next;
            }
            let src = state.cell();
            if src.x != dest.x && src.y != dest.y {
                let a = Cell::new(dest.x, src.y);
                let b = Cell::new(src.x, dest.y);
                if !world.is_free(a) && !world.is_free(b) {
                    return next;
                }
            }
            next.x = nx;
            next.y = ny;
        }
    }
    next
}

/// Places `n` robots in a small cluster, seeded. See [`spawn_robots_within`].
pub fn spawn_robots(
    world: &GroundTruthMap,
    n: usize,
    seed: u64,
) -> Result<Vec<RobotState>, WorldError> {
    spawn_robots_within(world, n, seed, DEFAULT_SPAWN_RADIUS)
}

/// Places `n` robots on distinct free-component cells, all pairwise within
/// `radius` of each other. The first robot prefers `S` cells when present.
pub fn spawn_robots_within(
    world: &GroundTruthMap,
    n: usize,
    seed: u64,
    radius: f64,
) -> Result<Vec<RobotState>, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hints: Vec<Cell> = world
        .spawn_hints()
        .iter()
        .copied()
        .filter(|&c| world.in_free_component(c))
        .collect();
    let anchors = if hints.is_empty() {
        world.free_component_cells()
    } else {
        hints
    };
    if n == 0 {
        return Ok(Vec::new());
    }
    let first = *anchors.choose(&mut rng).expect("free component nonempty");
    let mut candidates: Vec<Cell> = world
        .free_component_cells()
        .into_iter()
        .filter(|&c| c != first && c.dist(first) <= radius)
        .collect();
    candidates.shuffle(&mut rng);
    let mut chosen = vec![first];
    for c in candidates {
        if chosen.len() == n {
            break;
        }
        if chosen.iter().all(|&o| o.dist(c) <= radius) {
            chosen.push(c);
        }
    }
    if chosen.len() < n {
        return Err(WorldError::Spawn {
            requested: n,
            available: chosen.len(),
            radius,
        });
    }
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(id, c)| RobotState::at_cell(id, c, Heading::new(rng.gen_range(0..HEADING_COUNT))))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorConfig {
    /// Maximum ray length in cells.
    pub max_range: f64,
    /// Angular field of view in radians; `TAU` means omnidirectional.
    pub fov: f64,
    pub ray_count: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            max_range: 30.0,
            fov: TAU,
            ray_count: 72,
        }
    }
}

impl SensorConfig {
    /// Ray angles for a robot with the given heading.
    pub fn ray_angles(&self, heading: f64) -> Vec<f64> {
        let n = self.ray_count.max(1);
        if self.fov >= TAU - 1e-12 {
            (0..n).map(|k| heading + k as f64 * TAU / n as f64).collect()
        } else if n == 1 {
            vec![heading]
        } else {
            let start = heading - self.fov / 2.0;
            (0..n)
                .map(|k| start + k as f64 * self.fov / (n - 1) as f64)
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayHit {
    pub direction: f64,
    pub hit_range: Option<f64>,
    pub hit_cell: Option<Cell>,
}

/// One omnidirectional (or fov-limited) range scan.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthScan {
    pub origin: (f64, f64),
    pub max_range: f64,
    pub rays: Vec<RayHit>,
}

/// Casts every ray of `cfg` from the robot and reports the first obstacle hit.
pub fn sense(world: &GroundTruthMap, state: &RobotState, cfg: &SensorConfig) -> DepthScan {
    let origin = state.position();
    let rays = cfg
        .ray_angles(state.heading.radians())
        .into_iter()
        .map(|direction| {
            let mut hit = None;
            supercover(
                origin,
                direction,
                cfg.max_range,
                world.width(),
                world.height(),
                |c| {
                    if world.is_free(c) {
                        true
                    } else {
                        hit = Some(c);
                        false
                    }
                },
            );
            RayHit {
                direction,
                hit_range: hit.map(|c: Cell| {
                    let (cx, cy) = c.center();
                    ((cx - origin.0).powi(2) + (cy - origin.1).powi(2)).sqrt()
                }),
                hit_cell: hit,
            }
        })
        .collect();
    DepthScan {
        origin,
        max_range: cfg.max_range,
        rays,
    }
}
