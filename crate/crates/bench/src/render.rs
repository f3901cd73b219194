//! Binary PPM snapshots of an episode, one pixel per cell.

use std::path::Path;

use gridex_agent::EpisodeTrace;
use gridex_core::{Cell, GridDims, Knowledge};

use crate::BenchError;

pub type Rgb = [u8; 3];

pub const OBSTACLE: Rgb = [0, 200, 0];
pub const EXPLORED: Rgb = [173, 216, 230];
pub const UNKNOWN: Rgb = [128, 128, 128];
pub const GOAL: Rgb = [255, 255, 0];

/// Trail colours, cycled when there are more robots than entries.
pub const ROBOT_COLORS: [Rgb; 6] = [[220, 20, 60], [0, 0, 205], [255, 140, 0], [148, 0, 211], [0, 128, 128], [139, 69, 19]];

pub fn robot_color(r: usize) -> Rgb {
    ROBOT_COLORS[r % ROBOT_COLORS.len()]
}

/// Renders the map, then goal markers (a plus sign around each goal), then
/// trails on top so every visited cell keeps its trail colour.
pub fn render_ppm(trace: &EpisodeTrace) -> Vec<u8> {
    let g = &trace.grid;
    let (w, h) = (g.width(), g.height());
    let mut px: Vec<Rgb> = (0..w * h)
        .map(|i| match g.get(Cell::new(i % w, i / w)) {
            Knowledge::Unknown => UNKNOWN,
            Knowledge::Free => EXPLORED,
            Knowledge::Obstacle => OBSTACLE,
        })
        .collect();
    for goal in trace.goals.iter().flatten().flatten() {
        for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            if let Some(c) = goal.offset(dx, dy).filter(|c| c.x < w && c.y < h) {
                px[c.y * w + c.x] = GOAL;
            }
        }
    }
    for (r, trail) in trace.trails.iter().enumerate() {
        for c in trail.iter().filter(|c| c.x < w && c.y < h) {
            px[c.y * w + c.x] = robot_color(r);
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    out.extend(px.iter().flatten());
    out
}

pub fn write_ppm(trace: &EpisodeTrace, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, render_ppm(trace)).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}
