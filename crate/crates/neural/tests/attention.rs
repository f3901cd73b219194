use gridex_neural::layers::{GatCross, GatSelf};
use gridex_neural::sinkhorn::{row_argmax, sinkhorn_array};
use gridex_neural::{Array, Graph, ParameterSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn permute_rows(a: &Array, perm: &[usize]) -> Array {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| a.row(i).to_vec()).collect();
    Array::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn self_attention_is_permutation_equivariant(n in 1usize..=20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let gat = GatSelf::new(&mut ps, "g", 8, &mut rng).unwrap();
        let x = rand_array(&mut rng, &[n, 8]);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let run = |x: Array| {
            let mut g = Graph::new(&ps);
            let v = g.constant(x);
            let (y, _) = gat.forward(&mut g, v).unwrap();
            g.value(y).clone()
        };
        let y = run(x.clone());
        let yp = run(permute_rows(&x, &perm));
        prop_assert!(permute_rows(&y, &perm).max_abs_diff(&yp) < 1e-10);
    }

    #[test]
    fn cross_attention_is_equivariant_in_a(na in 1usize..=10, nb in 1usize..=10, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let gat = GatCross::new(&mut ps, "g", 6, &mut rng).unwrap();
        let a = rand_array(&mut rng, &[na, 6]);
        let b = rand_array(&mut rng, &[nb, 6]);
        let d = rand_array(&mut rng, &[na, nb]).map(f64::abs);
        let perm: Vec<usize> = (0..na).rev().collect();
        let run = |a: Array, d: Array| {
            let mut g = Graph::new(&ps);
            let (av, bv, dv) = (g.constant(a), g.constant(b.clone()), g.constant(d));
            let out = gat.forward(&mut g, av, bv, dv).unwrap();
            (g.value(out.nodes).clone(), g.value(out.attn).clone())
        };
        let (y, attn) = run(a.clone(), d.clone());
        let (yp, _) = run(permute_rows(&a, &perm), permute_rows(&d, &perm));
        prop_assert!(permute_rows(&y, &perm).max_abs_diff(&yp) < 1e-10);
        for i in 0..na {
            let s: f64 = attn.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn diagonal_dominant_costs_recovered_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut cost = rand_array(&mut rng, &[5, 5]).map(|v| v.abs());
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                p.swap(i, rng.gen_range(0..=i));
            }
            p
        };
        for (i, &j) in perm.iter().enumerate() {
            cost.data_mut()[i * 5 + j] = -5.0;
        }
        let p = sinkhorn_array(&cost.map(|c| -c), 0.05, 20).unwrap();
        assert_eq!(row_argmax(&p), perm);
        let best = permutations(5)
            .into_iter()
            .min_by(|a, b| {
                let ca: f64 = a.iter().enumerate().map(|(i, &j)| cost.at2(i, j)).sum();
                let cb: f64 = b.iter().enumerate().map(|(i, &j)| cost.at2(i, j)).sum();
                ca.total_cmp(&cb)
            })
            .unwrap();
        assert_eq!(best, perm);
    }
}
