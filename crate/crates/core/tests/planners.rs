use gridex_core::assign::{assignment_cost, hungarian};
use gridex_core::baselines::{
    coscan_planner, information_gain, mtsp_planner, mtsp_tours, nearest_frontier_planner, tour_length, utility_planner,
    voronoi_planner, Baseline, Scene,
};
use gridex_core::cell::{Cell, GridDims};
use gridex_core::frontier::{cluster_frontiers, detect_frontiers, FrontierClusters};
use gridex_core::geodesy::geodesic_distance;
use gridex_core::occupancy::{integrate_scan, Knowledge, OccupancyGrid};
use gridex_core::world::{random_world, sense, spawn_robots, Heading, RobotState, SensorConfig};

fn robot(id: usize, x: usize, y: usize) -> RobotState {
    RobotState::at_cell(id, Cell::new(x, y), Heading::new(0))
}

fn free_rect(g: &mut OccupancyGrid, x0: usize, y0: usize, x1: usize, y1: usize) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            g.mark_free(Cell::new(x, y));
        }
    }
}

fn obstacle_rect(g: &mut OccupancyGrid, x0: usize, y0: usize, x1: usize, y1: usize) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            g.mark_obstacle(Cell::new(x, y));
        }
    }
}

fn singletons(cells: &[Cell]) -> FrontierClusters {
    cluster_frontiers(cells, 0.5)
}

fn unknown_in_disk(g: &OccupancyGrid, c: Cell, r: f64) -> usize {
    (0..g.len())
        .map(|i| g.cell_at(i))
        .filter(|q| q.dist(c) <= r + 1e-12 && g.get(*q) == Knowledge::Unknown)
        .count()
}

#[test]
fn utility_prefers_hall_over_closet() {
    // explored corridor; east end opens onto an unknown hall, west end onto a
    // small closet whose walls are already mapped
    let mut g = OccupancyGrid::new(40, 30);
    free_rect(&mut g, 5, 14, 25, 15);
    obstacle_rect(&mut g, 0, 11, 4, 11);
    obstacle_rect(&mut g, 0, 18, 4, 18);
    obstacle_rect(&mut g, 0, 11, 0, 18);
    free_rect(&mut g, 1, 12, 4, 13);
    free_rect(&mut g, 1, 16, 4, 17);
    let hall = Cell::new(25, 14);
    let closet = Cell::new(5, 14);
    let robots = [robot(0, 15, 14), robot(1, 14, 15)];
    let clusters = singletons(&[closet, hall]);
    let s = Scene::new(&g, &robots, &clusters, 6.0);
    let gh = unknown_in_disk(&g, hall, 6.0);
    let gc = unknown_in_disk(&g, closet, 6.0);
    assert_eq!(information_gain(&g, hall, 6.0), gh);
    assert_eq!(information_gain(&g, closet, 6.0), gc);
    assert!(gh > gc, "hall {gh} closet {gc}");
    assert_eq!(utility_planner(&s), vec![Some(hall); 2]);
}

#[test]
fn utility_ties_go_to_nearest() {
    let mut g = OccupancyGrid::new(40, 9);
    free_rect(&mut g, 0, 0, 39, 8);
    let robots = [robot(0, 12, 4)];
    let clusters = singletons(&[Cell::new(30, 4), Cell::new(20, 4)]);
    let s = Scene::new(&g, &robots, &clusters, 3.0);
    assert_eq!(utility_planner(&s), vec![Some(Cell::new(20, 4))]);
}

#[test]
fn voronoi_separates_rooms() {
    // two rooms joined by a long corridor along the top
    let mut g = OccupancyGrid::new(41, 20);
    free_rect(&mut g, 1, 1, 39, 2);
    free_rect(&mut g, 1, 3, 12, 18);
    free_rect(&mut g, 28, 3, 39, 18);
    let robots = [robot(0, 6, 10), robot(1, 33, 10)];
    let a = Cell::new(3, 16);
    let b = Cell::new(36, 16);
    let clusters = singletons(&[a, b]);
    let s = Scene::new(&g, &robots, &clusters, 5.0);
    // distance table
    assert!(s.dist(0, a) < s.dist(1, a));
    assert!(s.dist(1, b) < s.dist(0, b));
    assert_eq!(voronoi_planner(&s), vec![Some(a), Some(b)]);
}

#[test]
fn voronoi_single_robot_is_nearest() {
    let mut g = OccupancyGrid::new(30, 30);
    free_rect(&mut g, 1, 1, 28, 28);
    let robots = [robot(0, 4, 9)];
    let clusters = singletons(&[Cell::new(20, 20), Cell::new(9, 3), Cell::new(27, 2)]);
    let s = Scene::new(&g, &robots, &clusters, 5.0);
    assert_eq!(voronoi_planner(&s), nearest_frontier_planner(&s));
}

#[test]
fn voronoi_fallback_takes_nearest_unclaimed() {
    let mut g = OccupancyGrid::new(40, 5);
    free_rect(&mut g, 1, 1, 38, 3);
    // robot 0 is nearer to every center
    let robots = [robot(0, 20, 2), robot(1, 2, 2)];
    let near = Cell::new(22, 2);
    let far = Cell::new(30, 2);
    let clusters = singletons(&[far, near]);
    let s = Scene::new(&g, &robots, &clusters, 5.0);
    assert_eq!(voronoi_planner(&s), vec![Some(near), Some(far)]);
}

#[test]
fn coscan_matches_best_pairing() {
    let mut g = OccupancyGrid::new(50, 30);
    free_rect(&mut g, 1, 1, 48, 28);
    let mut pts = Vec::new();
    for dy in 0..3 {
        for dx in 0..3 {
            pts.push(Cell::new(5 + dx, 20 + dy));
            pts.push(Cell::new(40 + dx, 5 + dy));
        }
    }
    let clusters = cluster_frontiers(&pts, 8.0);
    assert_eq!(clusters.len(), 2);
    for (r0, r1) in [((10, 10), (38, 20)), ((38, 20), (10, 10)), ((30, 4), (8, 26))] {
        let robots = [robot(0, r0.0, r0.1), robot(1, r1.0, r1.1)];
        let s = Scene::new(&g, &robots, &clusters, 5.0);
        let goals = coscan_planner(&s, 3);
        let left = Cell::new(6, 21);
        let right = Cell::new(41, 6);
        let straight = s.dist(0, left) + s.dist(1, right);
        let swapped = s.dist(0, right) + s.dist(1, left);
        let want = if straight <= swapped { vec![Some(left), Some(right)] } else { vec![Some(right), Some(left)] };
        assert_eq!(goals, want);
        assert_eq!(coscan_planner(&s, 3), goals);
    }
}

#[test]
fn mtsp_single_robot_collinear_is_optimal() {
    let mut g = OccupancyGrid::new(40, 5);
    free_rect(&mut g, 1, 1, 38, 3);
    let robots = [robot(0, 2, 2)];
    let cs = [Cell::new(30, 2), Cell::new(10, 2), Cell::new(20, 2)];
    let clusters = singletons(&cs);
    let s = Scene::new(&g, &robots, &clusters, 5.0);
    let tours = mtsp_tours(&s);
    let got = tour_length(&s, 0, &tours[0]);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .map(|p| {
            let order: Vec<Cell> = p.iter().map(|&i| clusters.centers[i]).collect();
            let mut len = s.dist(0, order[0]);
            for w in order.windows(2) {
                len += geodesic_distance(&g, w[0], w[1]);
            }
            len
        })
        .fold(f64::INFINITY, f64::min);
    assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    let order: Vec<Cell> = tours[0].iter().map(|&i| clusters.centers[i]).collect();
    assert_eq!(order, vec![Cell::new(10, 2), Cell::new(20, 2), Cell::new(30, 2)]);
    assert_eq!(mtsp_planner(&s), vec![Some(Cell::new(10, 2))]);
}

#[test]
fn mtsp_few_centers_matches_enumeration() {
    let mut g = OccupancyGrid::new(40, 40);
    free_rect(&mut g, 1, 1, 38, 38);
    let robots = [robot(0, 5, 5), robot(1, 30, 8), robot(2, 12, 33)];
    let cs = [Cell::new(33, 30), Cell::new(8, 20)];
    let clusters = singletons(&cs);
    let s = Scene::new(&g, &robots, &clusters, 5.0);
    let tours = mtsp_tours(&s);
    assert!(tours.iter().all(|t| t.len() <= 1));
    let mut best = f64::INFINITY;
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                best = best.min(s.dist(a, clusters.centers[0]) + s.dist(b, clusters.centers[1]));
            }
        }
    }
    let total: f64 = (0..3).map(|r| tour_length(&s, r, &tours[r])).sum();
    assert!((total - best).abs() < 1e-9);
    let cost: Vec<Vec<f64>> = (0..2).map(|i| (0..3).map(|r| s.dist(r, clusters.centers[i])).collect()).collect();
    assert!((assignment_cost(&cost, &hungarian(&cost)) - best).abs() < 1e-9);
}

#[test]
fn mtsp_visits_every_center_once() {
    let world = random_world(48, 48, 0.15, 5);
    let robots = spawn_robots(&world, 3, 5).unwrap();
    let mut grid = OccupancyGrid::for_world(&world);
    let cfg = SensorConfig { max_range: 10.0, ..SensorConfig::default() };
    for r in &robots {
        integrate_scan(&mut grid, r, &sense(&world, r, &cfg));
    }
    let clusters = cluster_frontiers(&detect_frontiers(&grid), 4.0);
    assert!(clusters.len() > 3);
    let s = Scene::new(&grid, &robots, &clusters, 10.0);
    let mut all: Vec<usize> = mtsp_tours(&s).concat();
    all.sort();
    let reachable: Vec<usize> = (0..clusters.len())
        .filter(|&i| (0..3).any(|r| s.dist(r, clusters.centers[i]).is_finite()))
        .collect();
    assert_eq!(all, reachable);
}

#[test]
fn planners_are_deterministic_and_return_centers() {
    for seed in 0..5 {
        let world = random_world(48, 48, 0.2, seed);
        let robots = spawn_robots(&world, 3, seed).unwrap();
        let mut grid = OccupancyGrid::for_world(&world);
        let cfg = SensorConfig { max_range: 10.0, ..SensorConfig::default() };
        for r in &robots {
            integrate_scan(&mut grid, r, &sense(&world, r, &cfg));
        }
        let frontier = detect_frontiers(&grid);
        if frontier.is_empty() {
            continue;
        }
        let clusters = cluster_frontiers(&frontier, 8.0);
        let s = Scene::new(&grid, &robots, &clusters, 10.0);
        for b in Baseline::ALL {
            let g1 = b.plan(&s, seed);
            let g2 = b.plan(&s, seed);
            assert_eq!(g1, g2, "{}", b.name());
            for g in g1.into_iter().flatten() {
                if b == Baseline::CoScan {
                    assert!(frontier.contains(&g));
                } else {
                    assert!(clusters.centers.contains(&g), "{}", b.name());
                }
            }
        }
    }
}
