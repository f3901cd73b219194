//! Fast-marching geodesic distances, steepest-descent path extraction and the
//! face-then-forward low-level controller.
//!
//! The solver is first order. Each trial value is the smaller of two
//! two-neighbour quadratic updates: one on the axis-aligned stencil (spacing 1)
//! and one on the diagonal stencil (spacing √2). Diagonal neighbours only take
//! part when both cells flanking the diagonal step are traversable, so the
//! front never leaks through a checkerboard gap.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

use crate::cell::{Cell, GridDims};
use crate::occupancy::OccupancyGrid;
use crate::world::{Action, RobotState, ROTATION_STEP};

#[derive(Debug, Error, PartialEq)]
pub enum GeodesyError {
    #[error("distance field needs at least one source")]
    NoSources,
    #[error("source {0} is not traversable")]
    BlockedSource(Cell),
    #[error("cell {0} cannot reach any source")]
    Unreachable(Cell),
}

/// Arrival times from a set of sources, `INFINITY` where unreachable.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    sources: Vec<Cell>,
}

impl GridDims for DistanceField {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl DistanceField {
    pub fn value(&self, c: Cell) -> f64 {
        if self.contains(c) {
            self.values[self.index(c)]
        } else {
            f64::INFINITY
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sources(&self) -> &[Cell] {
        &self.sources
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    t: f64,
    idx: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    // min-heap on (t, idx)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn quadratic_update(a: f64, b: f64, h: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    if hi - lo >= h {
        lo + h
    } else {
        (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt()) / 2.0
    }
}

/// First-order fast-marching solve of `|∇T| = 1` over cells where
/// `traversable` holds. Non-traversable cells stay at infinity.
pub fn fmm_field<G, P>(grid: &G, sources: &[Cell], traversable: P) -> Result<DistanceField, GeodesyError>
where
    G: GridDims,
    P: Fn(Cell) -> bool,
{
    if sources.is_empty() {
        return Err(GeodesyError::NoSources);
    }
    let (w, h) = (grid.width(), grid.height());
    let n = w * h;
    let pass: Vec<bool> = (0..n).map(|i| traversable(grid.cell_at(i))).collect();
    for &s in sources {
        if !grid.contains(s) || !pass[grid.index(s)] {
            return Err(GeodesyError::BlockedSource(s));
        }
    }

    let mut values = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        let i = grid.index(s);
        values[i] = 0.0;
        heap.push(Trial { t: 0.0, idx: i });
    }

    let at = |x: isize, y: isize| -> Option<usize> {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            None
        } else {
            Some(y as usize * w + x as usize)
        }
    };

    while let Some(Trial { t, idx }) = heap.pop() {
        if known[idx] || t > values[idx] {
            continue;
        }
        known[idx] = true;
        let (cx, cy) = ((idx % w) as isize, (idx / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let Some(j) = at(cx + dx, cy + dy) else { continue };
                if known[j] || !pass[j] {
                    continue;
                }
                let v = solve_cell(j, w, &values, &known, &pass, &at);
                if v < values[j] {
                    values[j] = v;
                    heap.push(Trial { t: v, idx: j });
                }
            }
        }
    }

    Ok(DistanceField {
        width: w,
        height: h,
        values,
        sources: sources.to_vec(),
    })
}

fn solve_cell(
    j: usize,
    w: usize,
    values: &[f64],
    known: &[bool],
    pass: &[bool],
    at: &dyn Fn(isize, isize) -> Option<usize>,
) -> f64 {
    let (x, y) = ((j % w) as isize, (j / w) as isize);
    let kv = |dx: isize, dy: isize| -> f64 {
        match at(x + dx, y + dy) {
            Some(i) if known[i] => values[i],
            _ => f64::INFINITY,
        }
    };
    let diag = |dx: isize, dy: isize| -> f64 {
        let flanks_open = at(x + dx, y).is_some_and(|i| pass[i]) && at(x, y + dy).is_some_and(|i| pass[i]);
        if flanks_open {
            kv(dx, dy)
        } else {
            f64::INFINITY
        }
    };
    let cross = quadratic_update(kv(-1, 0).min(kv(1, 0)), kv(0, -1).min(kv(0, 1)), 1.0);
    let diagonal = quadratic_update(diag(-1, -1).min(diag(1, 1)), diag(1, -1).min(diag(-1, 1)), SQRT_2);
    cross.min(diagonal)
}

/// Known-free traversability used for planning: unknown cells are blocked.
pub fn known_free(grid: &OccupancyGrid) -> impl Fn(Cell) -> bool + '_ {
    move |c| grid.is_free(c)
}

/// Distance field over the known free space of an occupancy grid.
pub fn fmm_known_free(grid: &OccupancyGrid, sources: &[Cell]) -> Result<DistanceField, GeodesyError> {
    fmm_field(grid, sources, known_free(grid))
}

/// Geodesic distance from `a` to `b` through known free space (`INFINITY` when unreachable).
pub fn geodesic_distance(grid: &OccupancyGrid, a: Cell, b: Cell) -> f64 {
    match fmm_known_free(grid, &[a]) {
        Ok(f) => f.value(b),
        Err(_) => f64::INFINITY,
    }
}

/// Steepest descent over the 8-neighbourhood from `start` down to a source.
/// Diagonal steps are only taken when both flanking cells have finite values.
pub fn extract_path(field: &DistanceField, start: Cell) -> Result<Vec<Cell>, GeodesyError> {
    if !field.value(start).is_finite() {
        return Err(GeodesyError::Unreachable(start));
    }
    let mut path = vec![start];
    let mut cur = start;
    while field.value(cur) > 0.0 {
        let mut best: Option<(f64, Cell)> = None;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let Some(nb) = cur.offset(dx, dy) else { continue };
                let v = field.value(nb);
                if !v.is_finite() {
                    continue;
                }
                if dx != 0 && dy != 0 {
                    let f1 = cur.offset(dx, 0).map_or(f64::INFINITY, |c| field.value(c));
                    let f2 = cur.offset(0, dy).map_or(f64::INFINITY, |c| field.value(c));
                    if !f1.is_finite() || !f2.is_finite() {
                        continue;
                    }
                }
                if best.is_none_or(|(bv, _)| v < bv) {
                    best = Some((v, nb));
                }
            }
        }
        match best {
            Some((v, nb)) if v < field.value(cur) => {
                path.push(nb);
                cur = nb;
            }
            _ => return Err(GeodesyError::Unreachable(start)),
        }
    }
    Ok(path)
}

/// Euclidean length of a cell path.
pub fn path_length(path: &[Cell]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Face the waypoint, then drive. Rotation ties (waypoint directly behind) turn left.
pub fn waypoint_action(state: &RobotState, waypoint: Cell) -> Action {
    if state.cell() == waypoint {
        return Action::Stay;
    }
    let (wx, wy) = waypoint.center();
    let bearing = (wy - state.y).atan2(wx - state.x);
    let diff = wrap_angle(bearing - state.heading.radians());
    if diff.abs() <= ROTATION_STEP / 2.0 + 1e-9 {
        Action::Forward
    } else if diff > 0.0 || (diff.abs() - PI).abs() < 1e-9 {
        Action::RotateLeft
    } else {
        Action::RotateRight
    }
}
