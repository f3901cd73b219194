//! Plain-text episode traces, so `run` and `render` can be separate steps.
//!
//! ```text
//! gridex-trace 1
//! size <w> <h>
//! <h rows of '#', '.', '?'>
//! robots <n>
//! <n lines: x,y x,y ...>
//! cycles <k>
//! <k lines of n goals: x,y or ->
//! ```

use std::fmt::Write as _;

use gridex_agent::EpisodeTrace;
use gridex_core::{Cell, GridDims, Knowledge, OccupancyGrid};

use crate::BenchError;

const MAGIC: &str = "gridex-trace 1";

fn cell_str(c: Cell) -> String {
    format!("{},{}", c.x, c.y)
}

pub fn write_trace(trace: &EpisodeTrace) -> String {
    let g = &trace.grid;
    let mut s = format!("{MAGIC}\nsize {} {}\n", g.width(), g.height());
    for y in 0..g.height() {
        for x in 0..g.width() {
            s.push(match g.get(Cell::new(x, y)) {
                Knowledge::Unknown => '?',
                Knowledge::Free => '.',
                Knowledge::Obstacle => '#',
            });
        }
        s.push('\n');
    }
    let _ = writeln!(s, "robots {}", trace.trails.len());
    for trail in &trace.trails {
        let cells: Vec<String> = trail.iter().map(|&c| cell_str(c)).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    let _ = writeln!(s, "cycles {}", trace.goals.len());
    for goals in &trace.goals {
        let cells: Vec<String> = goals.iter().map(|g| g.map_or_else(|| "-".to_string(), cell_str)).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    s
}

fn bad(line: usize, what: &str) -> BenchError {
    BenchError::Usage(format!("trace line {line}: {what}"))
}

fn parse_cell(tok: &str, line: usize) -> Result<Cell, BenchError> {
    let (x, y) = tok.split_once(',').ok_or_else(|| bad(line, "expected x,y"))?;
    let x = x.parse().map_err(|_| bad(line, "bad x"))?;
    let y = y.parse().map_err(|_| bad(line, "bad y"))?;
    Ok(Cell::new(x, y))
}

fn header(lines: &[&str], i: usize, key: &str) -> Result<Vec<usize>, BenchError> {
    let l = lines.get(i).ok_or_else(|| bad(i + 1, "unexpected end"))?;
    let rest = l.strip_prefix(key).ok_or_else(|| bad(i + 1, &format!("expected '{key}'")))?;
    rest.split_whitespace().map(|t| t.parse().map_err(|_| bad(i + 1, "bad count"))).collect()
}

pub fn read_trace(text: &str) -> Result<EpisodeTrace, BenchError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&MAGIC) {
        return Err(bad(1, "not a gridex trace"));
    }
    let [w, h] = header(&lines, 1, "size")?[..] else { return Err(bad(2, "expected width and height")) };
    let mut grid = OccupancyGrid::new(w, h);
    for y in 0..h {
        let row = lines.get(2 + y).ok_or_else(|| bad(3 + y, "missing grid row"))?;
        if row.chars().count() != w {
            return Err(bad(3 + y, "grid row has the wrong width"));
        }
        for (x, ch) in row.chars().enumerate() {
            let c = Cell::new(x, y);
            match ch {
                '.' => {
                    grid.mark_free(c);
                }
                '#' => {
                    grid.mark_obstacle(c);
                }
                '?' => {}
                _ => return Err(bad(3 + y, "unexpected grid character")),
            }
        }
    }
    let mut i = 2 + h;
    let [n] = header(&lines, i, "robots")?[..] else { return Err(bad(i + 1, "expected robot count")) };
    i += 1;
    let mut trails = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.get(i).ok_or_else(|| bad(i + 1, "missing trail"))?;
        trails.push(l.split_whitespace().map(|t| parse_cell(t, i + 1)).collect::<Result<Vec<_>, _>>()?);
        i += 1;
    }
    let [k] = header(&lines, i, "cycles")?[..] else { return Err(bad(i + 1, "expected cycle count")) };
    i += 1;
    let mut goals = Vec::with_capacity(k);
    for _ in 0..k {
        let l = lines.get(i).ok_or_else(|| bad(i + 1, "missing goals"))?;
        let row = l
            .split_whitespace()
            .map(|t| if t == "-" { Ok(None) } else { parse_cell(t, i + 1).map(Some) })
            .collect::<Result<Vec<_>, _>>()?;
        goals.push(row);
        i += 1;
    }
    for c in trails.iter().flatten().chain(goals.iter().flatten().flatten()) {
        if c.x >= w || c.y >= h {
            return Err(BenchError::Usage(format!("trace cell {c} lies outside the {w}x{h} map")));
        }
    }
    Ok(EpisodeTrace { grid, trails, goals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut grid = OccupancyGrid::new(4, 3);
        grid.mark_free(Cell::new(1, 1));
        grid.mark_obstacle(Cell::new(0, 0));
        let trace = EpisodeTrace {
            grid,
            trails: vec![vec![Cell::new(1, 1), Cell::new(2, 1)], vec![]],
            goals: vec![vec![Some(Cell::new(3, 2)), None]],
        };
        let text = write_trace(&trace);
        assert_eq!(read_trace(&text).unwrap(), trace);
        assert!(read_trace("hello").is_err());
        assert!(read_trace(&text.replace("2,1", "9,1")).is_err());
    }
}
