use std::collections::BinaryHeap;

use gridex_core::cell::{Cell, GridDims};
use gridex_core::frontier::{cluster_frontiers, detect_frontiers, is_frontier};
use gridex_core::geodesy::{extract_path, fmm_field};
use gridex_core::occupancy::{integrate_scan, Knowledge, OccupancyGrid};
use gridex_core::raycast::supercover_cells;
use gridex_core::world::{random_world, sense, spawn_robots, step, Action, GroundTruthMap, Heading, RobotState, SensorConfig, Terrain};
use proptest::prelude::*;

fn action_strategy() -> impl Strategy<Value = Action> {
    prop_oneof![
        4 => Just(Action::Forward),
        1 => Just(Action::RotateLeft),
        1 => Just(Action::RotateRight),
        1 => Just(Action::Stay),
    ]
}

/// Dijkstra over the 8-neighbourhood with unit/√2 weights; diagonal moves
/// require both flanking cells to be free.
fn dijkstra8(world: &GroundTruthMap, source: Cell) -> Vec<f64> {
    #[derive(PartialEq)]
    struct E(f64, usize);
    impl Eq for E {}
    impl Ord for E {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
        }
    }
    impl PartialOrd for E {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    let mut d = vec![f64::INFINITY; world.len()];
    let mut heap = BinaryHeap::new();
    d[world.index(source)] = 0.0;
    heap.push(E(0.0, world.index(source)));
    while let Some(E(t, i)) = heap.pop() {
        if t > d[i] {
            continue;
        }
        let c = world.cell_at(i);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let Some(n) = c.offset(dx, dy) else { continue };
                if !world.is_free(n) {
                    continue;
                }
                let w = if dx != 0 && dy != 0 {
                    let f1 = c.offset(dx, 0).is_some_and(|q| world.is_free(q));
                    let f2 = c.offset(0, dy).is_some_and(|q| world.is_free(q));
                    if !(f1 && f2) {
                        continue;
                    }
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let j = world.index(n);
                if t + w < d[j] {
                    d[j] = t + w;
                    heap.push(E(t + w, j));
                }
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn robots_never_enter_obstacles(seed in 0u64..1000, actions in prop::collection::vec(action_strategy(), 0..200)) {
        let world = random_world(24, 24, 0.25, seed);
        let mut robots = spawn_robots(&world, 2, seed).unwrap();
        for a in actions {
            for r in robots.iter_mut() {
                *r = step(&world, r, a);
                prop_assert!(world.is_free(r.cell()));
            }
        }
    }

    #[test]
    fn sensing_is_pure_and_sound(seed in 0u64..1000, heading in 0u8..12) {
        let world = random_world(32, 32, 0.2, seed);
        let mut robot = spawn_robots(&world, 1, seed).unwrap()[0];
        robot.heading = Heading::new(heading);
        let cfg = SensorConfig { max_range: 12.0, ..SensorConfig::default() };
        let a = sense(&world, &robot, &cfg);
        let b = sense(&world, &robot, &cfg);
        prop_assert_eq!(&a, &b);
        for ray in &a.rays {
            let cells = supercover_cells(a.origin, ray.direction, cfg.max_range, world.width(), world.height());
            match ray.hit_cell {
                Some(hit) => {
                    prop_assert_eq!(world.terrain(hit), Terrain::Obstacle);
                    prop_assert!(ray.hit_range.unwrap() <= cfg.max_range + 1e-9);
                    let pos = cells.iter().position(|&c| c == hit).unwrap();
                    for c in &cells[..pos] {
                        prop_assert!(world.is_free(*c));
                    }
                }
                None => {
                    prop_assert!(cells.iter().all(|&c| world.is_free(c)));
                }
            }
        }
    }

    #[test]
    fn mapping_monotone_and_sound(seed in 0u64..1000, actions in prop::collection::vec(action_strategy(), 1..60)) {
        let world = random_world(28, 28, 0.2, seed);
        let cfg = SensorConfig { max_range: 8.0, ..SensorConfig::default() };
        let mut robots = spawn_robots(&world, 2, seed).unwrap();
        let mut grid = OccupancyGrid::for_world(&world);
        let mut prev = grid.clone();
        for a in actions {
            for r in robots.iter_mut() {
                *r = step(&world, r, a);
                let scan = sense(&world, r, &cfg);
                integrate_scan(&mut grid, r, &scan);
            }
            prop_assert!(grid.explored_count() >= prev.explored_count());
            for i in 0..grid.len() {
                if prev.cells()[i] != Knowledge::Unknown {
                    prop_assert_ne!(grid.cells()[i], Knowledge::Unknown);
                }
            }
            let counted = grid.cells().iter().filter(|&&k| k != Knowledge::Unknown).count();
            prop_assert_eq!(counted, grid.explored_count());
            prop_assert!(grid.consistent_with(&world));
            prev = grid.clone();
        }
    }

    #[test]
    fn clustering_invariants(pts in prop::collection::vec((0usize..40, 0usize..40), 0..200), r in 1.0f64..10.0) {
        let points: Vec<Cell> = pts.iter().map(|&(x, y)| Cell::new(x, y)).collect();
        let out = cluster_frontiers(&points, r);
        let mut uniq = points.clone();
        uniq.sort();
        uniq.dedup();
        // partition
        let mut all: Vec<Cell> = out.points().collect();
        all.sort();
        prop_assert_eq!(&all, &uniq);
        for (cluster, &center) in out.clusters.iter().zip(&out.centers) {
            prop_assert!(cluster.contains(&center));
            // connectivity of the r-adjacency graph inside the cluster
            let mut seen = vec![false; cluster.len()];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..cluster.len() {
                    if !seen[j] && cluster[i].dist(cluster[j]) <= r {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            // medoid by enumeration
            let sum = |a: Cell| cluster.iter().map(|&b| a.dist(b)).sum::<f64>();
            let best = cluster.iter().map(|&c| sum(c)).fold(f64::INFINITY, f64::min);
            prop_assert!(sum(center) <= best + 1e-9);
        }
        // distinct clusters are farther apart than r
        for a in 0..out.clusters.len() {
            for b in a + 1..out.clusters.len() {
                for p in &out.clusters[a] {
                    for q in &out.clusters[b] {
                        prop_assert!(p.dist(*q) > r);
                    }
                }
            }
        }
    }

    #[test]
    fn adding_obstacles_never_shortens(seed in 0u64..500) {
        let world = random_world(32, 32, 0.15, seed);
        let src = world.free_component_cells()[0];
        let base = fmm_field(&world, &[src], |c| world.is_free(c)).unwrap();
        let extra = random_world(32, 32, 0.1, seed + 7);
        let both = |c: Cell| world.is_free(c) && (extra.is_free(c) || c == src);
        let blocked = fmm_field(&world, &[src], both).unwrap();
        for i in 0..world.len() {
            let b = blocked.values()[i];
            if b.is_finite() {
                prop_assert!(b >= base.values()[i] - 1e-9);
            }
        }
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn fmm_between_euclid_and_dijkstra() {
    for seed in 0..10 {
        let world = random_world(64, 64, 0.25, seed);
        let src = world.free_component_cells()[world.free_component_size() / 2];
        let f = fmm_field(&world, &[src], |c| world.is_free(c)).unwrap();
        let d8 = dijkstra8(&world, src);
        for i in 0..world.len() {
            let v = f.values()[i];
            assert_eq!(v.is_finite(), d8[i].is_finite(), "reachability differs at {}", world.cell_at(i));
            if v.is_finite() {
                let e = world.cell_at(i).dist(src);
                assert!(v >= e - 1e-9, "below euclid at {}: {v} < {e}", world.cell_at(i));
                assert!(v <= d8[i] + 0.5, "above dijkstra at {}: {v} > {}", world.cell_at(i), d8[i]);
            }
        }
    }
}

#[test]
fn l_shaped_wall_close_to_dijkstra() {
    let mut text = String::new();
    for y in 0..20 {
        for x in 0..20 {
            let wall = x == 0 || y == 0 || x == 19 || y == 19 || (x == 10 && y < 14) || (y == 13 && (4..=10).contains(&x));
            text.push(if wall { '#' } else { '.' });
        }
        text.push('\n');
    }
    let world = gridex_core::world::load_world(&text).unwrap();
    let a = Cell::new(5, 5);
    let b = Cell::new(15, 5);
    let f = fmm_field(&world, &[a], |c| world.is_free(c)).unwrap();
    let d8 = dijkstra8(&world, a)[world.index(b)];
    let v = f.value(b);
    assert!((v - d8).abs() <= 0.08 * d8, "{v} vs {d8}");
    let g = fmm_field(&world, &[b], |c| world.is_free(c)).unwrap();
    assert!((g.value(a) - v).abs() <= 0.05 * v);
}

#[test]
fn paths_stay_traversable_and_descend() {
    for seed in 0..10 {
        let world = random_world(40, 40, 0.25, seed);
        let cells = world.free_component_cells();
        let src = cells[0];
        let f = fmm_field(&world, &[src], |c| world.is_free(c)).unwrap();
        for &start in cells.iter().step_by(37) {
            let p = extract_path(&f, start).unwrap();
            assert_eq!(*p.last().unwrap(), src);
            for w in p.windows(2) {
                assert!(world.is_free(w[1]));
                assert!(f.value(w[1]) < f.value(w[0]));
            }
        }
    }
}

#[test]
fn frontiers_match_brute_force_after_disk_sensing() {
    let text: String = (0..40)
        .map(|y| {
            (0..40)
                .map(|x| if x == 0 || y == 0 || x == 39 || y == 39 { '#' } else { '.' })
                .chain(std::iter::once('\n'))
                .collect::<String>()
        })
        .collect();
    let world = gridex_core::world::load_world(&text).unwrap();
    let robot = RobotState::at_cell(0, Cell::new(20, 20), Heading::new(0));
    let scan = sense(&world, &robot, &SensorConfig { max_range: 5.0, ..SensorConfig::default() });
    let mut grid = OccupancyGrid::for_world(&world);
    integrate_scan(&mut grid, &robot, &scan);
    let got = detect_frontiers(&grid);
    let mut want = Vec::new();
    for y in 0..40 {
        for x in 0..40 {
            let c = Cell::new(x, y);
            if grid.get(c) != Knowledge::Free {
                continue;
            }
            let unknown_nb = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                .iter()
                .filter_map(|&(dx, dy)| c.offset(dx, dy))
                .filter(|n| n.x < 40 && n.y < 40)
                .any(|n| grid.get(n) == Knowledge::Unknown);
            if unknown_nb {
                want.push(c);
            }
        }
    }
    assert!(!got.is_empty());
    assert_eq!(got, want);
    assert!(got.iter().all(|&c| is_frontier(&grid, c)));
}
