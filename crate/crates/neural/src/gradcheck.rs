//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParameterSet};
use crate::NeuralError;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Finite-difference step.
    pub h: f64,
    /// Magnitude below which errors are measured absolutely rather than
    /// relative to the gradient.
    pub floor: f64,
    /// Entries sampled per parameter tensor (all entries if smaller).
    pub max_entries: usize,
    /// Restrict to these parameters; empty checks all.
    pub only: Vec<ParamId>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { h: 1e-5, floor: 1e-6, max_entries: 24, only: Vec::new(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval(params: &ParameterSet, f: &impl Fn(&mut Graph) -> Result<Var, NeuralError>) -> Result<f64, NeuralError> {
    let mut g = Graph::new(params);
    let out = f(&mut g)?;
    Ok(g.value(out).item())
}

/// Compares the gradient of the scalar built by `f` against central
/// differences, perturbing one parameter entry at a time.
pub fn check_gradients(
    params: &ParameterSet,
    cfg: &GradCheck,
    f: impl Fn(&mut Graph) -> Result<Var, NeuralError>,
) -> Result<GradCheckReport, NeuralError> {
    let analytic = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        g.backward(out).for_params(&g)
    };
    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        if !cfg.only.is_empty() && !cfg.only.contains(&id) {
            continue;
        }
        let n = params.get(id).len();
        let entries: Vec<usize> = if n <= cfg.max_entries {
            (0..n).collect()
        } else {
            let mut e = sample(&mut rng, n, cfg.max_entries).into_vec();
            e.sort_unstable();
            e
        };
        for e in entries {
            let orig = params.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + cfg.h;
            let fp = eval(&work, &f)?;
            work.get_mut(id).data_mut()[e] = orig - cfg.h;
            let fm = eval(&work, &f)?;
            work.get_mut(id).data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let a = analytic[id.index()].data()[e];
            let rel = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Mismatch { param: params.name(id).to_string(), entry: e, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    Ok(report)
}
