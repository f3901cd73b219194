//! Classical long-term goal planners used as comparison baselines.
//!
//! Every planner maps a [`Scene`] to one optional goal per robot; `None` means
//! the robot holds position for the cycle. Distances are geodesic distances
//! through known free space.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assign::hungarian;
use crate::cell::{Cell, GridDims};
use crate::frontier::FrontierClusters;
use crate::geodesy::{fmm_known_free, DistanceField};
use crate::occupancy::{Knowledge, OccupancyGrid};
use crate::world::RobotState;

const KMEANS_ITERS: usize = 20;

/// Everything a planner may look at for one decision.
pub struct Scene<'a> {
    pub grid: &'a OccupancyGrid,
    pub robots: &'a [RobotState],
    pub clusters: &'a FrontierClusters,
    /// Sensing radius in cells (information-gain disk radius).
    pub sensor_range: f64,
    robot_fields: Vec<DistanceField>,
}

impl<'a> Scene<'a> {
    pub fn new(
        grid: &'a OccupancyGrid,
        robots: &'a [RobotState],
        clusters: &'a FrontierClusters,
        sensor_range: f64,
    ) -> Self {
        let robot_fields = robots
            .iter()
            .map(|r| {
                fmm_known_free(grid, &[r.cell()]).expect("robot stands on known free space")
            })
            .collect();
        Self {
            grid,
            robots,
            clusters,
            sensor_range,
            robot_fields,
        }
    }

    /// Geodesic distance from robot `r` to cell `c`.
    pub fn dist(&self, r: usize, c: Cell) -> f64 {
        self.robot_fields[r].value(c)
    }

    pub fn robot_field(&self, r: usize) -> &DistanceField {
        &self.robot_fields[r]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    Nearest,
    Utility,
    Voronoi,
    CoScan,
    Mtsp,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::Nearest,
        Baseline::Utility,
        Baseline::Voronoi,
        Baseline::CoScan,
        Baseline::Mtsp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Nearest => "nearest",
            Baseline::Utility => "utility",
            Baseline::Voronoi => "voronoi",
            Baseline::CoScan => "coscan",
            Baseline::Mtsp => "mtsp",
        }
    }

    pub fn plan(self, scene: &Scene, seed: u64) -> Vec<Option<Cell>> {
        match self {
            Baseline::Nearest => nearest_frontier_planner(scene),
            Baseline::Utility => utility_planner(scene),
            Baseline::Voronoi => voronoi_planner(scene),
            Baseline::CoScan => coscan_planner(scene, seed),
            Baseline::Mtsp => mtsp_planner(scene),
        }
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown planner {s:?}"))
    }
}

/// Index of the smallest finite value, lowest index on ties.
fn argmin_finite(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Each robot independently heads for its geodesically nearest cluster center.
pub fn nearest_frontier_planner(scene: &Scene) -> Vec<Option<Cell>> {
    let centers = &scene.clusters.centers;
    (0..scene.robots.len())
        .map(|r| argmin_finite(centers.iter().map(|&c| scene.dist(r, c))).map(|i| centers[i]))
        .collect()
}

/// Unknown cells within `radius` of `c` (no occlusion).
pub fn information_gain(grid: &OccupancyGrid, c: Cell, radius: f64) -> usize {
    let r = radius.floor() as isize;
    let mut n = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) > radius * radius {
                continue;
            }
            if let Some(q) = c.offset(dx, dy) {
                if grid.contains(q) && grid.get(q) == Knowledge::Unknown {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Each robot picks the reachable center with the most unknown cells in its
/// sensing disk; ties go to the nearer center, then the lower cluster index.
pub fn utility_planner(scene: &Scene) -> Vec<Option<Cell>> {
    let centers = &scene.clusters.centers;
    let gains: Vec<usize> = centers
        .iter()
        .map(|&c| information_gain(scene.grid, c, scene.sensor_range))
        .collect();
    (0..scene.robots.len())
        .map(|r| {
            let mut best: Option<(usize, usize, f64)> = None;
            for (i, &c) in centers.iter().enumerate() {
                let d = scene.dist(r, c);
                if !d.is_finite() {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, g, bd)) => gains[i] > g || (gains[i] == g && d < bd),
                };
                if better {
                    best = Some((i, gains[i], d));
                }
            }
            best.map(|(i, _, _)| centers[i])
        })
        .collect()
}

/// Geodesic Voronoi split of the centers among robots; each robot takes its
/// nearest owned center, robots owning none take the nearest center nobody
/// has claimed yet (or the nearest overall when all are claimed).
pub fn voronoi_planner(scene: &Scene) -> Vec<Option<Cell>> {
    let centers = &scene.clusters.centers;
    let n_r = scene.robots.len();
    let owner: Vec<Option<usize>> = centers
        .iter()
        .map(|&c| argmin_finite((0..n_r).map(|r| scene.dist(r, c))))
        .collect();
    let mut goals: Vec<Option<usize>> = (0..n_r)
        .map(|r| {
            argmin_finite(centers.iter().enumerate().map(|(i, &c)| {
                if owner[i] == Some(r) {
                    scene.dist(r, c)
                } else {
                    f64::INFINITY
                }
            }))
        })
        .collect();
    for r in 0..n_r {
        if goals[r].is_some() {
            continue;
        }
        let claimed: Vec<bool> = (0..centers.len()).map(|i| goals.contains(&Some(i))).collect();
        let unclaimed = argmin_finite(centers.iter().enumerate().map(|(i, &c)| {
            if claimed[i] {
                f64::INFINITY
            } else {
                scene.dist(r, c)
            }
        }));
        goals[r] = unclaimed.or_else(|| argmin_finite(centers.iter().map(|&c| scene.dist(r, c))));
    }
    goals.into_iter().map(|g| g.map(|i| centers[i])).collect()
}

fn kmeans(points: &[Cell], k: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<(f64, f64)> = sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i].center())
        .collect();
    for _ in 0..KMEANS_ITERS {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for p in points {
            let (px, py) = p.center();
            let j = nearest_centroid(&centroids, px, py);
            sums[j].0 += px;
            sums[j].1 += py;
            sums[j].2 += 1;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
    }
    centroids
}

fn nearest_centroid(centroids: &[(f64, f64)], x: f64, y: f64) -> usize {
    let d = |c: &(f64, f64)| (c.0 - x).powi(2) + (c.1 - y).powi(2);
    let mut best = 0;
    for j in 1..centroids.len() {
        if d(&centroids[j]) < d(&centroids[best]) {
            best = j;
        }
    }
    best
}

/// k-means over raw frontier points, then a minimum-total-distance matching of
/// robots to k-means clusters. Each goal is the frontier point nearest to the
/// assigned centroid.
pub fn coscan_planner(scene: &Scene, seed: u64) -> Vec<Option<Cell>> {
    let points: Vec<Cell> = {
        let mut p: Vec<Cell> = scene.clusters.points().collect();
        p.sort();
        p
    };
    let n_r = scene.robots.len();
    if points.is_empty() || n_r == 0 {
        return vec![None; n_r];
    }
    let k = n_r.min(points.len());
    let centroids = kmeans(&points, k, seed);
    let reps: Vec<Cell> = centroids
        .iter()
        .map(|&(cx, cy)| {
            *points
                .iter()
                .min_by(|a, b| {
                    let da = (a.x as f64 - cx).powi(2) + (a.y as f64 - cy).powi(2);
                    let db = (b.x as f64 - cx).powi(2) + (b.y as f64 - cy).powi(2);
                    da.total_cmp(&db)
                })
                .expect("points nonempty")
        })
        .collect();
    // clusters as rows (k <= n_r), robots as columns
    let cost: Vec<Vec<f64>> = reps
        .iter()
        .map(|&c| (0..n_r).map(|r| scene.dist(r, c)).collect())
        .collect();
    let matched = hungarian(&cost);
    let mut goals: Vec<Option<Cell>> = vec![None; n_r];
    for (cluster, &robot) in matched.iter().enumerate() {
        if cost[cluster][robot].is_finite() {
            goals[robot] = Some(reps[cluster]);
        }
    }
    for (r, goal) in goals.iter_mut().enumerate() {
        if goal.is_none() {
            *goal = argmin_finite(reps.iter().map(|&c| scene.dist(r, c))).map(|i| reps[i]);
        }
    }
    goals
}

/// Open tours built by cheapest insertion; each robot's goal is its first stop.
///
/// With no more centers than robots the tours are single stops given by an
/// optimal matching. Otherwise every tour is seeded with its matched center and
/// the remaining centers are inserted greedily where they add the least length.
pub fn mtsp_planner(scene: &Scene) -> Vec<Option<Cell>> {
    mtsp_tours(scene)
        .into_iter()
        .map(|t| t.first().map(|&i| scene.clusters.centers[i]))
        .collect()
}

/// Tours as lists of center indices, one per robot.
pub fn mtsp_tours(scene: &Scene) -> Vec<Vec<usize>> {
    let centers = &scene.clusters.centers;
    let n_r = scene.robots.len();
    let n_f = centers.len();
    let mut tours: Vec<Vec<usize>> = vec![Vec::new(); n_r];
    if n_f == 0 || n_r == 0 {
        return tours;
    }
    let robot_cost: Vec<Vec<f64>> = (0..n_r)
        .map(|r| centers.iter().map(|&c| scene.dist(r, c)).collect())
        .collect();

    if n_f <= n_r {
        let cost: Vec<Vec<f64>> = (0..n_f).map(|i| (0..n_r).map(|r| robot_cost[r][i]).collect()).collect();
        for (i, &r) in hungarian(&cost).iter().enumerate() {
            if cost[i][r].is_finite() {
                tours[r].push(i);
            }
        }
        return tours;
    }

    let center_fields: Vec<DistanceField> = centers
        .iter()
        .map(|&c| fmm_known_free(scene.grid, &[c]).expect("frontier centers are known free"))
        .collect();
    let cc = |a: usize, b: usize| center_fields[a].value(centers[b]);

    let mut visited = vec![false; n_f];
    for (r, &i) in hungarian(&robot_cost).iter().enumerate() {
        if robot_cost[r][i].is_finite() {
            tours[r].push(i);
            visited[i] = true;
        }
    }
    loop {
        // (added length, center, robot, insert position)
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for c in (0..n_f).filter(|&c| !visited[c]) {
            for r in 0..n_r {
                let tour = &tours[r];
                for pos in 0..=tour.len() {
                    let prev = if pos == 0 { robot_cost[r][c] } else { cc(tour[pos - 1], c) };
                    let added = if pos == tour.len() {
                        prev
                    } else {
                        let next = tour[pos];
                        let old = if pos == 0 { robot_cost[r][next] } else { cc(tour[pos - 1], next) };
                        prev + cc(c, next) - old
                    };
                    if added.is_finite() && best.is_none_or(|b| added < b.0 - 1e-12) {
                        best = Some((added, c, r, pos));
                    }
                }
            }
        }
        match best {
            Some((_, c, r, pos)) => {
                tours[r].insert(pos, c);
                visited[c] = true;
            }
            None => break,
        }
    }
    tours
}

/// Length of robot `r`'s open tour.
pub fn tour_length(scene: &Scene, r: usize, tour: &[usize]) -> f64 {
    let centers = &scene.clusters.centers;
    let mut total = 0.0;
    let mut prev: Option<usize> = None;
    for &i in tour {
        total += match prev {
            None => scene.dist(r, centers[i]),
            Some(p) => crate::geodesy::geodesic_distance(scene.grid, centers[p], centers[i]),
        };
        prev = Some(i);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontier::cluster_frontiers;
    use crate::world::Heading;

    fn open_grid(w: usize, h: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(w, h);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                g.mark_free(Cell::new(x, y));
            }
        }
        g
    }

    fn robot(id: usize, x: usize, y: usize) -> RobotState {
        RobotState::at_cell(id, Cell::new(x, y), Heading::new(0))
    }

    fn singletons(cells: &[Cell]) -> FrontierClusters {
        cluster_frontiers(cells, 0.5)
    }

    #[test]
    fn nearest_picks_closer_center() {
        let g = open_grid(30, 5);
        let robots = [robot(0, 10, 2)];
        let clusters = singletons(&[Cell::new(15, 2), Cell::new(1, 2)]);
        let s = Scene::new(&g, &robots, &clusters, 5.0);
        assert_eq!(nearest_frontier_planner(&s), vec![Some(Cell::new(15, 2))]);
    }

    #[test]
    fn nearest_skips_unreachable() {
        // column x = 20 stays unknown, cutting the corridor in two
        let mut g = OccupancyGrid::new(30, 5);
        for y in 1..4 {
            for x in (1..29).filter(|&x| x != 20) {
                g.mark_free(Cell::new(x, y));
            }
        }
        let robots = [robot(0, 10, 2)];
        let clusters = singletons(&[Cell::new(25, 2), Cell::new(2, 2)]);
        let s = Scene::new(&g, &robots, &clusters, 5.0);
        assert_eq!(nearest_frontier_planner(&s), vec![Some(Cell::new(2, 2))]);
    }

    #[test]
    fn single_cluster_shared_by_all() {
        let g = open_grid(20, 20);
        let robots = [robot(0, 3, 3), robot(1, 5, 5), robot(2, 7, 3)];
        let clusters = singletons(&[Cell::new(10, 10)]);
        let s = Scene::new(&g, &robots, &clusters, 5.0);
        let want = vec![Some(Cell::new(10, 10)); 3];
        assert_eq!(utility_planner(&s), want);
        assert_eq!(nearest_frontier_planner(&s), want);
        assert_eq!(coscan_planner(&s, 1), want);
        let m = mtsp_planner(&s);
        assert_eq!(m, vec![None, Some(Cell::new(10, 10)), None]);
    }

    #[test]
    fn planner_names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
        }
        assert!("ans-merge".parse::<Baseline>().is_err());
    }
}
