//! Topological graphs over robots, frontier clusters and their history.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use gridex_core::geodesy::fmm_known_free;
use gridex_core::{Cell, DistanceField, FrontierClusters, GridDims, OccupancyGrid, RobotState};
use gridex_neural::Array;

/// Map cells per feature cell along each axis.
pub const FEATURE_STRIDE: usize = 8;
/// History entries kept per robot.
pub const HISTORY_CAPACITY: usize = 8;
/// Normalized distance assigned to unreachable pairs.
pub const UNREACHABLE: f64 = 2.0;
/// Length of the category + geometry part of a node feature.
pub const NODE_INPUT: usize = 5;

/// Bilinear weights of point `p` (map cell coordinates) over a `hh × wh`
/// feature grid. Feature cell `(u, v)` is centered at map point
/// `(8u + 3.5, 8v + 3.5)`; points outside the center lattice are clamped.
pub fn interp_weights(p: (f64, f64), hh: usize, wh: usize) -> [(usize, f64); 4] {
    let s = FEATURE_STRIDE as f64;
    let off = (s - 1.0) / 2.0;
    let u = ((p.0 - off) / s).clamp(0.0, (wh - 1) as f64);
    let v = ((p.1 - off) / s).clamp(0.0, (hh - 1) as f64);
    let (u0, v0) = (u.floor() as usize, v.floor() as usize);
    let (u1, v1) = ((u0 + 1).min(wh - 1), (v0 + 1).min(hh - 1));
    let (fu, fv) = (u - u0 as f64, v - v0 as f64);
    [
        (v0 * wh + u0, (1.0 - fu) * (1.0 - fv)),
        (v0 * wh + u1, fu * (1.0 - fv)),
        (v1 * wh + u0, (1.0 - fu) * fv),
        (v1 * wh + u1, fu * fv),
    ]
}

/// Interpolated feature vector at `p` from a `[C, H_h, W_h]` feature map.
pub fn bilerp(p: (f64, f64), feat: &Array) -> Vec<f64> {
    let [c, hh, wh] = feat.shape()[..] else {
        panic!("bilerp needs a [C, H, W] feature map, got {:?}", feat.shape());
    };
    let plane = hh * wh;
    let w = interp_weights(p, hh, wh);
    (0..c)
        .map(|k| w.iter().map(|&(i, wt)| wt * feat.data()[k * plane + i]).sum())
        .collect()
}

/// Row `i` holds the interpolation weights of `points[i]`, so that
/// `M · featᵀ` gives one feature row per point.
pub fn interp_matrix(points: &[(f64, f64)], hh: usize, wh: usize) -> Array {
    let mut m = vec![0.0; points.len() * hh * wh];
    for (r, &p) in points.iter().enumerate() {
        for (i, w) in interp_weights(p, hh, wh) {
            m[r * hh * wh + i] += w;
        }
    }
    Array::new(&[points.len(), hh * wh], m).expect("sizes agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Robot,
    Frontier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoNode {
    pub category: Category,
    pub cell: Cell,
    /// `(x, y, s)`: position in cells, and heading in radians for robots or
    /// cluster size for frontiers.
    pub geo: [f64; 3],
    pub rep: Vec<f64>,
}

impl TopoNode {
    pub fn one_hot(&self) -> [f64; 2] {
        match self.category {
            Category::Robot => [1.0, 0.0],
            Category::Frontier => [0.0, 1.0],
        }
    }

    /// Category bits and geometry scaled to roughly unit range.
    pub fn input_features(&self, width: usize, height: usize) -> [f64; NODE_INPUT] {
        let [x, y, s] = self.geo;
        let s = match self.category {
            Category::Robot => s / TAU,
            Category::Frontier => s / (width + height) as f64,
        };
        let [a, b] = self.one_hot();
        [a, b, x / width as f64, y / height as f64, s]
    }

    /// Full node vector: category, geometry, rep.
    pub fn feature_vector(&self, width: usize, height: usize) -> Vec<f64> {
        let mut v = self.input_features(width, height).to_vec();
        v.extend_from_slice(&self.rep);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub cell: Cell,
    pub s: f64,
    pub rep: Vec<f64>,
}

/// Past robot poses and past goals, a bounded FIFO per robot.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    capacity: usize,
    poses: Vec<VecDeque<HistoryEntry>>,
    goals: Vec<VecDeque<HistoryEntry>>,
}

impl History {
    pub fn new(robots: usize) -> Self {
        Self::with_capacity(robots, HISTORY_CAPACITY)
    }

    pub fn with_capacity(robots: usize, capacity: usize) -> Self {
        Self { capacity, poses: vec![VecDeque::new(); robots], goals: vec![VecDeque::new(); robots] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn push(queue: &mut VecDeque<HistoryEntry>, cap: usize, e: HistoryEntry) {
        if queue.len() == cap {
            queue.pop_front();
        }
        queue.push_back(e);
    }

    pub fn push_pose(&mut self, robot: usize, e: HistoryEntry) {
        Self::push(&mut self.poses[robot], self.capacity, e);
    }

    pub fn push_goal(&mut self, robot: usize, e: HistoryEntry) {
        Self::push(&mut self.goals[robot], self.capacity, e);
    }

    /// Records each robot's pose and its executed goal with rep vectors read
    /// from `features` (the map encoding at decision time).
    pub fn record(&mut self, robots: &[RobotState], goals: &[Option<(Cell, usize)>], features: &Array) {
        for (i, r) in robots.iter().enumerate() {
            let rep = bilerp(r.position(), features);
            self.push_pose(i, HistoryEntry { cell: r.cell(), s: r.heading.radians(), rep });
            if let Some(Some((g, n))) = goals.get(i) {
                let rep = bilerp(g.center(), features);
                self.push_goal(i, HistoryEntry { cell: *g, s: *n as f64, rep });
            }
        }
    }

    /// Robot-major, oldest first.
    pub fn poses(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.poses.iter().flatten()
    }

    pub fn goals(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.goals.iter().flatten()
    }

    pub fn pose_queue(&self, robot: usize) -> &VecDeque<HistoryEntry> {
        &self.poses[robot]
    }

    pub fn goal_queue(&self, robot: usize) -> &VecDeque<HistoryEntry> {
        &self.goals[robot]
    }
}

/// Directed edges from a source node set to a target node set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    pub sources: usize,
    pub targets: usize,
    pub edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Complete graph with self-loops.
    pub fn complete(n: usize) -> Self {
        Self::bipartite(n, n)
    }

    pub fn bipartite(a: usize, b: usize) -> Self {
        let edges = (0..a).flat_map(|i| (0..b).map(move |j| (i, j))).collect();
        Self { sources: a, targets: b, edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoGraphSet {
    pub width: usize,
    pub height: usize,
    pub robots: Vec<TopoNode>,
    pub frontiers: Vec<TopoNode>,
    pub robot_history: Vec<TopoNode>,
    pub goal_history: Vec<TopoNode>,
    pub g_r: EdgeSet,
    pub g_f: EdgeSet,
    pub g_rh: EdgeSet,
    pub g_gh: EdgeSet,
    pub g_rrh: EdgeSet,
    pub g_fgh: EdgeSet,
    pub g_rf: EdgeSet,
    /// `[n_r, |robot history|]`.
    pub d_rrh: Array,
    /// `[n_f, |goal history|]`.
    pub d_fgh: Array,
    /// `[n_r, n_f]`.
    pub d_rf: Array,
}

fn normalized(field: Option<&DistanceField>, c: Cell, diag: f64) -> f64 {
    match field.map(|f| f.value(c)) {
        Some(d) if d.is_finite() => d / diag,
        _ => UNREACHABLE,
    }
}

fn distance_table(fields: &[Option<DistanceField>], targets: &[Cell], diag: f64) -> Array {
    let data = fields
        .iter()
        .flat_map(|f| targets.iter().map(move |&c| normalized(f.as_ref(), c, diag)))
        .collect();
    Array::new(&[fields.len(), targets.len()], data).expect("sizes agree")
}

/// Builds nodes, edges and normalized geodesic edge attributes.
///
/// `features` is the `[C, H_h, W_h]` observation encoding used for the rep
/// vectors of current nodes; history nodes keep the vectors they were
/// recorded with.
pub fn build_graph_set(
    robots: &[RobotState],
    clusters: &FrontierClusters,
    features: &Array,
    grid: &OccupancyGrid,
    history: &History,
) -> TopoGraphSet {
    let diag = grid.diagonal();
    let robot_nodes: Vec<TopoNode> = robots
        .iter()
        .map(|r| {
            let (x, y) = r.position();
            TopoNode { category: Category::Robot, cell: r.cell(), geo: [x, y, r.heading.radians()], rep: bilerp((x, y), features) }
        })
        .collect();
    let frontier_nodes: Vec<TopoNode> = clusters
        .centers
        .iter()
        .zip(&clusters.clusters)
        .map(|(&c, members)| {
            let (x, y) = c.center();
            TopoNode { category: Category::Frontier, cell: c, geo: [x, y, members.len() as f64], rep: bilerp((x, y), features) }
        })
        .collect();
    let hist = |e: &HistoryEntry, category| {
        let (x, y) = e.cell.center();
        TopoNode { category, cell: e.cell, geo: [x, y, e.s], rep: e.rep.clone() }
    };
    let robot_history: Vec<TopoNode> = history.poses().map(|e| hist(e, Category::Robot)).collect();
    let goal_history: Vec<TopoNode> = history.goals().map(|e| hist(e, Category::Frontier)).collect();

    let robot_fields: Vec<Option<DistanceField>> =
        robots.iter().map(|r| fmm_known_free(grid, &[r.cell()]).ok()).collect();
    let cells = |nodes: &[TopoNode]| nodes.iter().map(|n| n.cell).collect::<Vec<_>>();
    let d_rf = distance_table(&robot_fields, &cells(&frontier_nodes), diag);
    let d_rrh = distance_table(&robot_fields, &cells(&robot_history), diag);
    let d_fgh = if goal_history.is_empty() {
        Array::zeros(&[frontier_nodes.len(), 0])
    } else {
        let frontier_fields: Vec<Option<DistanceField>> =
            frontier_nodes.iter().map(|n| fmm_known_free(grid, &[n.cell]).ok()).collect();
        distance_table(&frontier_fields, &cells(&goal_history), diag)
    };

    let (nr, nf, nrh, ngh) = (robot_nodes.len(), frontier_nodes.len(), robot_history.len(), goal_history.len());
    TopoGraphSet {
        width: grid.width(),
        height: grid.height(),
        robots: robot_nodes,
        frontiers: frontier_nodes,
        robot_history,
        goal_history,
        g_r: EdgeSet::complete(nr),
        g_f: EdgeSet::complete(nf),
        g_rh: EdgeSet::complete(nrh),
        g_gh: EdgeSet::complete(ngh),
        g_rrh: EdgeSet::bipartite(nr, nrh),
        g_fgh: EdgeSet::bipartite(nf, ngh),
        g_rf: EdgeSet::bipartite(nr, nf),
        d_rrh,
        d_fgh,
        d_rf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridex_core::frontier::cluster_frontiers;
    use gridex_core::Heading;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array {
        Array::new(&[c, h, w], (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn column(feat: &Array, v: usize, u: usize) -> Vec<f64> {
        let [c, h, w] = feat.shape()[..] else { unreachable!() };
        (0..c).map(|k| feat.data()[k * h * w + v * w + u]).collect()
    }

    #[test]
    fn cell_centers_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_features(&mut rng, 4, 3, 5);
        for v in 0..3 {
            for u in 0..5 {
                let p = (8.0 * u as f64 + 3.5, 8.0 * v as f64 + 3.5);
                assert_eq!(bilerp(p, &f), column(&f, v, u));
            }
        }
    }

    #[test]
    fn midpoint_is_mean_of_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_features(&mut rng, 3, 4, 4);
        let got = bilerp((8.0 + 3.5 + 4.0, 16.0 + 3.5 + 4.0), &f);
        let cells = [column(&f, 2, 1), column(&f, 2, 2), column(&f, 3, 1), column(&f, 3, 2)];
        for k in 0..3 {
            let mean = cells.iter().map(|c| c[k]).sum::<f64>() / 4.0;
            assert!((got[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn bilerp_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = random_features(&mut rng, 4, 4, 6);
            let g = random_features(&mut rng, 4, 4, 6);
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let combo = f.zip(&g, |x, y| a * x + b * y);
            let p = (rng.gen_range(-3.0..50.0), rng.gen_range(-3.0..35.0));
            let lhs = bilerp(p, &combo);
            let (bf, bg) = (bilerp(p, &f), bilerp(p, &g));
            for k in 0..4 {
                assert!((lhs[k] - (a * bf[k] + b * bg[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_form_agrees_with_bilerp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&mut rng, 3, 4, 5);
        let pts = [(0.0, 0.0), (13.2, 7.9), (39.0, 31.0)];
        let m = interp_matrix(&pts, 4, 5);
        let ft = f.clone().reshape(&[3, 20]).unwrap().transpose();
        let reps = gridex_neural::matmul(&m, &ft).unwrap();
        for (i, &p) in pts.iter().enumerate() {
            let want = bilerp(p, &f);
            for (k, w) in want.iter().enumerate().take(3) {
                assert!((reps.at2(i, k) - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn history_is_fifo_per_robot() {
        let mut h = History::with_capacity(2, 3);
        for i in 0..5 {
            h.push_pose(0, HistoryEntry { cell: Cell::new(i, 0), s: 0.0, rep: vec![] });
        }
        h.push_pose(1, HistoryEntry { cell: Cell::new(9, 9), s: 0.0, rep: vec![] });
        let cells: Vec<usize> = h.pose_queue(0).iter().map(|e| e.cell.x).collect();
        assert_eq!(cells, vec![2, 3, 4]);
        assert_eq!(h.poses().count(), 4);
        assert_eq!(h.goals().count(), 0);
    }

    fn open_grid(w: usize, h: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(w, h);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                g.mark_free(Cell::new(x, y));
            }
        }
        g
    }

    #[test]
    fn graph_set_shapes_and_node_contents() {
        let grid = open_grid(32, 32);
        let robots = [
            RobotState::at_cell(0, Cell::new(5, 5), Heading::new(3)),
            RobotState::at_cell(1, Cell::new(20, 8), Heading::new(7)),
        ];
        let pts = [Cell::new(2, 20), Cell::new(3, 20), Cell::new(25, 25), Cell::new(28, 4), Cell::new(28, 5), Cell::new(28, 6)];
        let clusters = cluster_frontiers(&pts, 2.0);
        assert_eq!(clusters.len(), 3);
        let feat = Array::zeros(&[32, 4, 4]);
        let set = build_graph_set(&robots, &clusters, &feat, &grid, &History::new(2));
        assert_eq!(set.g_rf.len(), 6);
        assert!(set.g_rh.is_empty() && set.g_gh.is_empty() && set.g_rrh.is_empty() && set.g_fgh.is_empty());
        assert_eq!(set.g_r.len(), 4);
        assert_eq!(set.robots[1].geo[2], Heading::new(7).radians());
        for (node, members) in set.frontiers.iter().zip(&clusters.clusters) {
            assert_eq!(node.geo[2], members.len() as f64);
            assert_eq!(node.feature_vector(32, 32).len(), 5 + 32);
        }
        assert_eq!(set.d_rf.shape(), &[2, 3]);
        assert!(set.d_rf.data().iter().all(|&d| d >= 0.0 && d.is_finite()));
    }

    #[test]
    fn unreachable_pairs_get_sentinel() {
        let mut grid = OccupancyGrid::new(20, 10);
        for y in 1..9 {
            for x in (1..19).filter(|&x| x != 10) {
                grid.mark_free(Cell::new(x, y));
            }
        }
        let robots = [RobotState::at_cell(0, Cell::new(3, 3), Heading::new(0))];
        let clusters = cluster_frontiers(&[Cell::new(15, 5), Cell::new(5, 5)], 1.0);
        let set = build_graph_set(&robots, &clusters, &Array::zeros(&[2, 1, 2]), &grid, &History::new(1));
        for (j, f) in set.frontiers.iter().enumerate() {
            let d = set.d_rf.at2(0, j);
            if f.cell.x > 10 {
                assert_eq!(d, UNREACHABLE);
            } else {
                assert!(d < 1.0);
            }
        }
    }

    #[test]
    fn history_nodes_appear_in_cross_graphs() {
        let grid = open_grid(24, 24);
        let robots = [RobotState::at_cell(0, Cell::new(5, 5), Heading::new(0))];
        let clusters = cluster_frontiers(&[Cell::new(15, 15)], 1.0);
        let feat = Array::full(&[2, 3, 3], 0.5);
        let mut h = History::new(1);
        h.record(&robots, &[Some((Cell::new(10, 10), 4))], &feat);
        h.record(&robots, &[None], &feat);
        let set = build_graph_set(&robots, &clusters, &feat, &grid, &h);
        assert_eq!(set.robot_history.len(), 2);
        assert_eq!(set.goal_history.len(), 1);
        assert_eq!(set.goal_history[0].geo[2], 4.0);
        assert_eq!(set.g_rrh.len(), 2);
        assert_eq!(set.d_fgh.shape(), &[1, 1]);
        let d = set.d_fgh.data()[0];
        assert!((d * grid.diagonal() - 5.0 * 2f64.sqrt()).abs() < 0.5);
    }
}
