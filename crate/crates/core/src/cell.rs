use std::cmp::Ordering;
use std::fmt;

/// Integer grid coordinate. `x` is the column, `y` the row.
///
/// Cell `(x, y)` covers the continuous square `[x - 0.5, x + 0.5) × [y - 0.5, y + 0.5)`,
/// so its center sits on integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn center(self) -> (f64, f64) {
        (self.x as f64, self.y as f64)
    }

    pub fn dist(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }

    /// Cell containing a continuous point, if it lies in the positive quadrant.
    pub fn containing(x: f64, y: f64) -> Option<Cell> {
        let cx = x.round();
        let cy = y.round();
        if cx < 0.0 || cy < 0.0 || !cx.is_finite() || !cy.is_finite() {
            return None;
        }
        Some(Cell::new(cx as usize, cy as usize))
    }

    pub fn offset(self, dx: isize, dy: isize) -> Option<Cell> {
        let x = self.x.checked_add_signed(dx)?;
        let y = self.y.checked_add_signed(dy)?;
        Some(Cell::new(x, y))
    }
}

/// Row-major order: by row first, then column.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Anything laid out as a `width × height` row-major grid.
pub trait GridDims {
    fn width(&self) -> usize;
    fn height(&self) -> usize;

    fn contains(&self, c: Cell) -> bool {
        c.x < self.width() && c.y < self.height()
    }

    fn index(&self, c: Cell) -> usize {
        c.y * self.width() + c.x
    }

    fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width(), idx / self.width())
    }

    fn len(&self) -> usize {
        self.width() * self.height()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the grid diagonal in cells.
    fn diagonal(&self) -> f64 {
        ((self.width() * self.width() + self.height() * self.height()) as f64).sqrt()
    }

    /// In-bounds 4-neighbours, in the order left, right, up, down.
    fn neighbors4(&self, c: Cell) -> Neighbors {
        let mut out = Neighbors::default();
        if c.x > 0 {
            out.push(Cell::new(c.x - 1, c.y));
        }
        if c.x + 1 < self.width() {
            out.push(Cell::new(c.x + 1, c.y));
        }
        if c.y > 0 {
            out.push(Cell::new(c.x, c.y - 1));
        }
        if c.y + 1 < self.height() {
            out.push(Cell::new(c.x, c.y + 1));
        }
        out
    }
}

/// Small fixed-capacity neighbour list (at most 8 entries).
#[derive(Clone, Copy, Debug, Default)]
pub struct Neighbors {
    cells: [Option<Cell>; 8],
    len: usize,
}

impl Neighbors {
    fn push(&mut self, c: Cell) {
        self.cells[self.len] = Some(c);
        self.len += 1;
    }
}

impl Iterator for Neighbors {
    type Item = Cell;

    fn next(&mut self) -> Option<Cell> {
        if self.len == 0 {
            return None;
        }
        let first = self.cells[0];
        self.cells.copy_within(1.., 0);
        self.cells[7] = None;
        self.len -= 1;
        first
    }
}
