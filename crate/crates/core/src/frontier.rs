//! Frontier detection and adjacent-neighbour clustering of frontier points.

use crate::cell::{Cell, GridDims};
use crate::occupancy::{Knowledge, OccupancyGrid};

/// Default clustering radius in cells.
pub const DEFAULT_CLUSTER_RADIUS: f64 = 8.0;

/// Free cells with at least one unknown 4-neighbour, in row-major order.
pub fn detect_frontiers(grid: &OccupancyGrid) -> Vec<Cell> {
    let mut out = Vec::new();
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let c = Cell::new(x, y);
            if is_frontier(grid, c) {
                out.push(c);
            }
        }
    }
    out
}

pub fn is_frontier(grid: &OccupancyGrid, c: Cell) -> bool {
    grid.get(c) == Knowledge::Free
        && grid
            .neighbors4(c)
            .any(|n| grid.get(n) == Knowledge::Unknown)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrontierClusters {
    /// Member points of each cluster, row-major sorted.
    pub clusters: Vec<Vec<Cell>>,
    /// Representative point of each cluster.
    pub centers: Vec<Cell>,
}

impl FrontierClusters {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// All member points, flattened in cluster order.
    pub fn points(&self) -> impl Iterator<Item = Cell> + '_ {
        self.clusters.iter().flatten().copied()
    }
}

/// Greedy region growing: seed a cluster with the first unassigned point
/// (row-major), absorb every point within `r_clus` of any member until no more
/// can be absorbed, repeat. Each center is the member with the smallest mean
/// distance to the other members (first in row-major order on ties).
pub fn cluster_frontiers(points: &[Cell], r_clus: f64) -> FrontierClusters {
    assert!(r_clus > 0.0, "cluster radius must be positive");
    let mut pts = points.to_vec();
    pts.sort();
    pts.dedup();
    let n = pts.len();
    let mut assigned = vec![false; n];
    let mut out = FrontierClusters::default();
    for seed in 0..n {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut head = 0;
        while head < members.len() {
            let p = pts[members[head]];
            head += 1;
            for j in 0..n {
                if !assigned[j] && pts[j].dist(p) <= r_clus {
                    assigned[j] = true;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        let cluster: Vec<Cell> = members.iter().map(|&i| pts[i]).collect();
        out.centers.push(medoid(&cluster));
        out.clusters.push(cluster);
    }
    out
}

fn medoid(cluster: &[Cell]) -> Cell {
    let mut best = cluster[0];
    let mut best_sum = f64::INFINITY;
    for &a in cluster {
        let s: f64 = cluster.iter().map(|&b| a.dist(b)).sum();
        if s < best_sum - 1e-12 {
            best_sum = s;
            best = a;
        }
    }
    best
}
