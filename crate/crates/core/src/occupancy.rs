//! Shared global occupancy map built from range scans.

use crate::cell::{Cell, GridDims};
use crate::raycast::supercover;
use crate::world::{DepthScan, GroundTruthMap, RobotState, Terrain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Knowledge {
    Unknown,
    Free,
    Obstacle,
}

/// Three-state map. Cells never return to `Unknown` once observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cells: Vec<Knowledge>,
    explored: usize,
}

impl GridDims for OccupancyGrid {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![Knowledge::Unknown; width * height],
            explored: 0,
        }
    }

    pub fn for_world(world: &GroundTruthMap) -> Self {
        Self::new(world.width(), world.height())
    }

    pub fn get(&self, c: Cell) -> Knowledge {
        if self.contains(c) {
            self.cells[self.index(c)]
        } else {
            Knowledge::Unknown
        }
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.get(c) == Knowledge::Free
    }

    /// Number of non-unknown cells.
    pub fn explored_count(&self) -> usize {
        self.explored
    }

    /// Marks a cell free unless it is already known. Returns true on change.
    pub fn mark_free(&mut self, c: Cell) -> bool {
        let i = self.index(c);
        if self.cells[i] == Knowledge::Unknown {
            self.cells[i] = Knowledge::Free;
            self.explored += 1;
            true
        } else {
            false
        }
    }

    /// Marks a cell as obstacle; obstacle evidence always wins.
    pub fn mark_obstacle(&mut self, c: Cell) -> bool {
        let i = self.index(c);
        match self.cells[i] {
            Knowledge::Obstacle => false,
            Knowledge::Unknown => {
                self.cells[i] = Knowledge::Obstacle;
                self.explored += 1;
                true
            }
            Knowledge::Free => {
                self.cells[i] = Knowledge::Obstacle;
                true
            }
        }
    }

    /// Explored cells that are free and inside the world's free component.
    pub fn explored_free_in(&self, world: &GroundTruthMap) -> usize {
        (0..self.cells.len())
            .filter(|&i| {
                self.cells[i] == Knowledge::Free && world.in_free_component(self.cell_at(i))
            })
            .count()
    }

    /// Fraction of the world's reachable free area that has been observed.
    pub fn exploration_rate(&self, world: &GroundTruthMap) -> f64 {
        self.explored_free_in(world) as f64 / world.free_component_size() as f64
    }

    pub fn cells(&self) -> &[Knowledge] {
        &self.cells
    }

    /// True when every known cell agrees with the ground truth.
    pub fn consistent_with(&self, world: &GroundTruthMap) -> bool {
        (0..self.cells.len()).all(|i| {
            let truth = world.terrain(self.cell_at(i));
            match self.cells[i] {
                Knowledge::Unknown => true,
                Knowledge::Free => truth == Terrain::Free,
                Knowledge::Obstacle => truth == Terrain::Obstacle,
            }
        })
    }
}

/// Merges a scan into the grid: cells before each hit become free, hit cells
/// become obstacles, rays without a hit clear free space up to the max range.
pub fn integrate_scan(grid: &mut OccupancyGrid, state: &RobotState, scan: &DepthScan) {
    debug_assert_eq!(scan.origin, state.position());
    let (w, h) = (grid.width(), grid.height());
    for ray in &scan.rays {
        let hit = ray.hit_cell;
        supercover(scan.origin, ray.direction, scan.max_range, w, h, |c| {
            if Some(c) == hit {
                grid.mark_obstacle(c);
                false
            } else {
                grid.mark_free(c);
                true
            }
        });
    }
}
