//! Entropic normalization of an affinity matrix toward a doubly stochastic one.

use crate::array::Array;
use crate::graph::{Graph, Var};
use crate::params::ParameterSet;
use crate::NeuralError;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_ITERS: usize = 20;

/// Log of the Sinkhorn matrix for `exp(affinity / temperature)`.
///
/// Each iteration normalizes rows then columns; a final row normalization
/// makes every row a distribution. Works in the log domain throughout.
pub fn log_sinkhorn(g: &mut Graph, affinity: Var, temperature: f64, iters: usize) -> Result<Var, NeuralError> {
    if iters == 0 {
        return Err(NeuralError::Shape("sinkhorn needs at least one iteration".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(NeuralError::Numeric(format!("bad sinkhorn temperature {temperature}")));
    }
    if !g.value(affinity).is_finite() {
        return Err(NeuralError::Numeric("non-finite affinity".into()));
    }
    let (n, m) = g.value(affinity).dims2()?;
    if n == 0 || m == 0 {
        return Err(NeuralError::Degenerate("empty affinity matrix".into()));
    }
    let mut l = g.scale(affinity, 1.0 / temperature);
    for _ in 0..iters {
        l = normalize_rows(g, l)?;
        let col = g.logsumexp_axis0(l)?;
        let neg = g.neg(col);
        l = g.add_row(l, neg)?;
    }
    normalize_rows(g, l)
}

fn normalize_rows(g: &mut Graph, l: Var) -> Result<Var, NeuralError> {
    let row = g.logsumexp_axis1(l)?;
    let neg = g.neg(row);
    g.add_col(l, neg)
}

pub fn sinkhorn(g: &mut Graph, affinity: Var, temperature: f64, iters: usize) -> Result<Var, NeuralError> {
    let l = log_sinkhorn(g, affinity, temperature, iters)?;
    Ok(g.exp(l))
}

/// Gradient-free convenience wrapper.
pub fn sinkhorn_array(affinity: &Array, temperature: f64, iters: usize) -> Result<Array, NeuralError> {
    let ps = ParameterSet::new();
    let mut g = Graph::new(&ps);
    let a = g.constant(affinity.clone());
    let p = sinkhorn(&mut g, a, temperature, iters)?;
    Ok(g.value(p).clone())
}

/// Column index of each row's maximum (first on ties).
pub fn row_argmax(p: &Array) -> Vec<usize> {
    let (n, m) = p.dims2().expect("row_argmax needs a matrix");
    (0..n)
        .map(|i| {
            let row = p.row(i);
            (1..m).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array {
        Array::new(&[n, m], (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn one_by_one_is_one() {
        let p = sinkhorn_array(&Array::from_rows(&[vec![3.7]]).unwrap(), 0.1, 20).unwrap();
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn strong_diagonal_is_near_identity() {
        let c = 5.0;
        let a = Array::from_rows(&[vec![c, 0.0, 0.0], vec![0.0, c, 0.0], vec![0.0, 0.0, c]]).unwrap();
        let p = sinkhorn_array(&a, 0.1, 20).unwrap();
        for i in 0..3 {
            assert!(p.at2(i, i) > 0.99);
        }
    }

    #[test]
    fn rows_sum_to_one_and_entries_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, m) in [(3, 3), (2, 5), (5, 2), (1, 4)] {
            let p = sinkhorn_array(&random(&mut rng, n, m), 0.1, 20).unwrap();
            for i in 0..n {
                let s: f64 = p.row(i).iter().sum();
                assert!((s - 1.0).abs() <= 1e-9);
            }
            assert!(p.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn row_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let a = random(&mut rng, 4, 4);
            let mut shifted = a.clone();
            let k = rng.gen_range(0..4);
            let c = rng.gen_range(-3.0..3.0);
            for j in 0..4 {
                shifted.data_mut()[k * 4 + j] += c;
            }
            let p = sinkhorn_array(&a, 0.5, 50).unwrap();
            let q = sinkhorn_array(&shifted, 0.5, 50).unwrap();
            assert!(p.max_abs_diff(&q) < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let bad = Array::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(sinkhorn_array(&bad, 0.1, 5), Err(NeuralError::Numeric(_))));
        let ok = Array::from_rows(&[vec![0.0]]).unwrap();
        assert!(sinkhorn_array(&ok, 0.1, 0).is_err());
        assert!(sinkhorn_array(&ok, 0.0, 3).is_err());
    }
}
