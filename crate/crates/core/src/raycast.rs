//! Supercover ray traversal.
//!
//! Visits every cell a segment touches, in order of entry. When the segment
//! passes exactly through a cell corner both flanking cells are visited
//! (x-flank first) before the diagonal cell, so a ray cannot slip between two
//! diagonally adjacent obstacles.

use crate::cell::Cell;

const CORNER_EPS: f64 = 1e-9;

/// Walks the supercover of the segment starting at `origin` with angle
/// `direction` (radians, x toward increasing column, y toward increasing row)
/// and length `max_range`.
///
/// `visit` is called for every touched cell whose center lies within
/// `max_range` of the origin; returning `false` stops the walk. The walk also
/// stops when it would leave the `width × height` grid.
pub fn supercover<F>(
    origin: (f64, f64),
    direction: f64,
    max_range: f64,
    width: usize,
    height: usize,
    mut visit: F,
) where
    F: FnMut(Cell) -> bool,
{
    let (ox, oy) = origin;
    let Some(start) = Cell::containing(ox, oy) else {
        return;
    };
    if start.x >= width || start.y >= height {
        return;
    }

    let mut dx = direction.cos();
    let mut dy = direction.sin();
    if dx.abs() < 1e-12 {
        dx = 0.0;
    }
    if dy.abs() < 1e-12 {
        dy = 0.0;
    }

    let (mut cx, mut cy) = (start.x as isize, start.y as isize);
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 0.5 - ox) / dx
    } else if dx < 0.0 {
        (cx as f64 - 0.5 - ox) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 0.5 - oy) / dy
    } else if dy < 0.0 {
        (cy as f64 - 0.5 - oy) / dy
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };

    let in_range = |x: isize, y: isize| -> Option<Cell> {
        if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
            return None;
        }
        let ddx = x as f64 - ox;
        let ddy = y as f64 - oy;
        if (ddx * ddx + ddy * ddy).sqrt() > max_range + CORNER_EPS {
            return None;
        }
        Some(Cell::new(x as usize, y as usize))
    };

    if !visit(start) {
        return;
    }
    loop {
        let t_next = t_max_x.min(t_max_y);
        if t_next > max_range {
            return;
        }
        if (t_max_x - t_max_y).abs() < CORNER_EPS {
            for (x, y) in [(cx + step_x, cy), (cx, cy + step_y)] {
                match in_range(x, y) {
                    Some(c) => {
                        if !visit(c) {
                            return;
                        }
                    }
                    None => return,
                }
            }
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        match in_range(cx, cy) {
            Some(c) => {
                if !visit(c) {
                    return;
                }
            }
            None => return,
        }
    }
}

/// Collects the supercover cells of a segment into a vector.
pub fn supercover_cells(
    origin: (f64, f64),
    direction: f64,
    max_range: f64,
    width: usize,
    height: usize,
) -> Vec<Cell> {
    let mut out = Vec::new();
    supercover(origin, direction, max_range, width, height, |c| {
        out.push(c);
        true
    });
    out
}
