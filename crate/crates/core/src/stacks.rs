//! Five-channel binary map stacks.
//!
//! The observation stack is built only from the shared occupancy grid. The
//! privilege stack replaces the obstacle and free channels with ground truth
//! and is meant for the critic alone; the two are distinct types so the actor
//! path cannot accept privileged input.

use thiserror::Error;

use crate::cell::{Cell, GridDims};
use crate::occupancy::{Knowledge, OccupancyGrid};
use crate::world::{GroundTruthMap, RobotState, Terrain};

pub const CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Obstacle = 0,
    Free = 1,
    Robot = 2,
    Frontier = 3,
    Trajectory = 4,
}

impl Channel {
    pub const ALL: [Channel; CHANNELS] = [
        Channel::Obstacle,
        Channel::Free,
        Channel::Robot,
        Channel::Frontier,
        Channel::Trajectory,
    ];
}

#[derive(Debug, Error, PartialEq)]
pub enum StackError {
    #[error("dimension mismatch: grid is {grid:?}, ground truth is {truth:?}")]
    Shape {
        grid: (usize, usize),
        truth: (usize, usize),
    },
    #[error("cell {0} lies outside the map")]
    OutOfBounds(Cell),
}

/// Channel-major binary planes of size `width × height`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapStack {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GridDims for MapStack {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl MapStack {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; CHANNELS * width * height],
        }
    }

    pub fn get(&self, ch: Channel, c: Cell) -> bool {
        self.data[self.plane_offset(ch) + self.index(c)] != 0
    }

    pub fn set(&mut self, ch: Channel, c: Cell, on: bool) {
        let i = self.plane_offset(ch) + self.index(c);
        self.data[i] = on as u8;
    }

    pub fn plane(&self, ch: Channel) -> &[u8] {
        let off = self.plane_offset(ch);
        &self.data[off..off + self.width * self.height]
    }

    pub fn count(&self, ch: Channel) -> usize {
        self.plane(ch).iter().filter(|&&v| v != 0).count()
    }

    /// Raw channel-major bytes (`5 × height × width`).
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    fn plane_offset(&self, ch: Channel) -> usize {
        ch as usize * self.width * self.height
    }
}

/// Observation-derived stack (actor input).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationStack(pub MapStack);

/// Ground-truth-derived stack (critic and mutual-information input only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrivilegeStack(pub MapStack);

/// Builds the paired observation and privilege stacks for one decision step.
pub fn build_stacks(
    grid: &OccupancyGrid,
    truth: &GroundTruthMap,
    robots: &[RobotState],
    frontiers: &[Cell],
    trails: &[Vec<Cell>],
) -> Result<(ObservationStack, PrivilegeStack), StackError> {
    let (w, h) = (grid.width(), grid.height());
    if (truth.width(), truth.height()) != (w, h) {
        return Err(StackError::Shape {
            grid: (w, h),
            truth: (truth.width(), truth.height()),
        });
    }
    let check = |c: Cell| {
        if grid.contains(c) {
            Ok(c)
        } else {
            Err(StackError::OutOfBounds(c))
        }
    };

    let mut obs = MapStack::zeros(w, h);
    for i in 0..w * h {
        let c = grid.cell_at(i);
        match grid.get(c) {
            Knowledge::Obstacle => obs.set(Channel::Obstacle, c, true),
            Knowledge::Free => obs.set(Channel::Free, c, true),
            Knowledge::Unknown => {}
        }
    }
    for r in robots {
        obs.set(Channel::Robot, check(r.cell())?, true);
    }
    for &f in frontiers {
        obs.set(Channel::Frontier, check(f)?, true);
    }
    for trail in trails {
        for &c in trail {
            obs.set(Channel::Trajectory, check(c)?, true);
        }
    }

    let mut priv_ = obs.clone();
    for i in 0..w * h {
        let c = truth.cell_at(i);
        let free = truth.terrain(c) == Terrain::Free;
        priv_.set(Channel::Obstacle, c, !free);
        priv_.set(Channel::Free, c, free);
    }
    Ok((ObservationStack(obs), PrivilegeStack(priv_)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_world, Heading};

    fn room() -> GroundTruthMap {
        load_world("######\n#....#\n#....#\n######\n").unwrap()
    }

    #[test]
    fn empty_grid_no_robots() {
        let w = room();
        let g = OccupancyGrid::for_world(&w);
        let (o, p) = build_stacks(&g, &w, &[], &[], &[]).unwrap();
        for ch in Channel::ALL {
            assert_eq!(o.0.count(ch), 0);
        }
        assert_eq!(p.0.count(Channel::Free), 8);
        assert_eq!(p.0.count(Channel::Obstacle), 16);
        assert_eq!(p.0.count(Channel::Robot), 0);
    }

    #[test]
    fn full_knowledge_matches_privilege() {
        let w = room();
        let mut g = OccupancyGrid::for_world(&w);
        for i in 0..w.len() {
            let c = w.cell_at(i);
            if w.is_free(c) {
                g.mark_free(c);
            } else {
                g.mark_obstacle(c);
            }
        }
        let r = [RobotState::at_cell(0, Cell::new(1, 1), Heading::new(0))];
        let (o, p) = build_stacks(&g, &w, &r, &[], &[vec![Cell::new(1, 1)]]).unwrap();
        assert_eq!(o, ObservationStack(p.0.clone()));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let w = room();
        let g = OccupancyGrid::new(3, 3);
        assert!(matches!(build_stacks(&g, &w, &[], &[], &[]), Err(StackError::Shape { .. })));
    }
}
