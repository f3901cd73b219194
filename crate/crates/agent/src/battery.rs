//! Finite-difference gradient checks for every differentiable block of the
//! policy, from single layers up to the critic and the mutual-information
//! head running on real map stacks.

use gridex_core::world::random_world;
use gridex_core::{build_stacks, MapStack};
use gridex_neural::gradcheck::{check_gradients, GradCheck, GradCheckReport};
use gridex_neural::layers::{conv_encoder, GatCross, GatSelf, Mlp};
use gridex_neural::sinkhorn::log_sinkhorn;
use gridex_neural::{Array, Graph, NeuralError, ParamId, ParameterSet, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{Episode, EpisodeConfig};
use crate::policy::{mi_estimate_var, mi_loss, Agent};
use crate::AgentError;

/// Largest accepted relative error.
pub const BATTERY_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const BATTERY_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatteryResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl BatteryResult {
    pub fn passes(&self) -> bool {
        self.report.passes(BATTERY_TOLERANCE)
    }
}

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches length")
}

/// Dots `y` with a fixed random tensor so the scalar depends on every entry.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let r = g.constant(rand_array(&mut rng, &shape));
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

fn config(max_entries: usize) -> GradCheck {
    GradCheck { h: BATTERY_STEP, max_entries, ..GradCheck::default() }
}

fn ids_with_prefix(ps: &ParameterSet, prefixes: &[&str]) -> Vec<ParamId> {
    ps.iter()
        .filter(|(_, name, _)| prefixes.iter().any(|p| name.starts_with(&format!("{p}."))))
        .map(|(id, _, _)| id)
        .collect()
}

/// Observation and privilege stacks from a few planning cycles of a seeded
/// episode on a random 32×32 map, one pair per cycle.
pub fn sample_stacks(pairs: usize, seed: u64) -> Result<Vec<(MapStack, MapStack)>, AgentError> {
    let world = random_world(32, 32, 0.15, seed);
    let cfg = EpisodeConfig { robots: 2, horizon: 4, ..EpisodeConfig::default() };
    let mut ep = Episode::new(&world, &cfg, seed)?;
    let mut out = Vec::with_capacity(pairs);
    while out.len() < pairs {
        let (pts, clusters) = ep.frontiers();
        let (obs, privilege) = build_stacks(ep.grid(), &world, ep.robots(), &pts, ep.trails())?;
        out.push((obs.0, privilege.0));
        if clusters.is_empty() {
            break;
        }
        let goals: Vec<_> = (0..ep.robots().len()).map(|r| Some(clusters.centers[r % clusters.len()])).collect();
        ep.execute(&goals);
    }
    if out.len() < pairs {
        return Err(AgentError::Config(format!("episode ended after {} of {pairs} sample states", out.len())));
    }
    Ok(out)
}

fn layer_checks(out: &mut Vec<BatteryResult>) -> Result<(), NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParameterSet::new();
    let mlp = Mlp::new(&mut ps, "mlp", &[6, 16, 1], &mut rng)?;
    let x = ps.add("x", rand_array(&mut rng, &[5, 6]))?;
    let report = check_gradients(&ps, &config(24), |g| {
        let x = g.param(x);
        let y = mlp.forward(g, x)?;
        let t = g.tanh(y);
        Ok(g.sum(t))
    })?;
    out.push(BatteryResult { name: "mlp", report });

    let mut ps = ParameterSet::new();
    let enc = conv_encoder(&mut ps, "enc", &mut rng)?;
    let x = ps.add("x", rand_array(&mut rng, &[5, 16, 16]))?;
    let report = check_gradients(&ps, &config(12), |g| {
        let x = g.param(x);
        let y = enc.forward(g, x)?;
        project(g, y, 5)
    })?;
    out.push(BatteryResult { name: "conv encoder", report });

    let mut ps = ParameterSet::new();
    let gat = GatSelf::new(&mut ps, "gat", 8, &mut rng)?;
    let x = ps.add("x", rand_array(&mut rng, &[5, 8]))?;
    let report = check_gradients(&ps, &config(24), |g| {
        let x = g.param(x);
        let (y, attn) = gat.forward(g, x)?;
        let p = project(g, y, 7)?;
        let q = project(g, attn, 8)?;
        g.add(p, q)
    })?;
    out.push(BatteryResult { name: "gat self", report });

    let mut ps = ParameterSet::new();
    let gat = GatCross::new(&mut ps, "gx", 8, &mut rng)?;
    let a = ps.add("a", rand_array(&mut rng, &[3, 8]))?;
    let b = ps.add("b", rand_array(&mut rng, &[4, 8]))?;
    let d = ps.add("d", rand_array(&mut rng, &[3, 4]).map(f64::abs))?;
    let report = check_gradients(&ps, &config(24), |g| {
        let (a, b, d) = (g.param(a), g.param(b), g.param(d));
        let o = gat.forward(g, a, b, d)?;
        let p = project(g, o.nodes, 9)?;
        let q = project(g, o.attn, 10)?;
        let r = project(g, o.logits, 11)?;
        let pq = g.add(p, q)?;
        g.add(pq, r)
    })?;
    out.push(BatteryResult { name: "gat cross", report });

    let mut ps = ParameterSet::new();
    let a = ps.add("a", rand_array(&mut rng, &[3, 4]))?;
    let report = check_gradients(&ps, &config(24), |g| {
        let a = g.param(a);
        let l = log_sinkhorn(g, a, 0.1, 20)?;
        let p = g.exp(l);
        let x = project(g, p, 11)?;
        let y = project(g, l, 12)?;
        g.add(x, y)
    })?;
    out.push(BatteryResult { name: "sinkhorn", report });
    Ok(())
}

fn agent_checks(out: &mut Vec<BatteryResult>) -> Result<(), AgentError> {
    let agent = Agent::new(11)?;
    let net = &agent.net;
    // Continuous inputs keep every activation clear of ReLU kinks; binary map
    // stacks repeat the same pre-activation across whole uniform regions.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs: Vec<(Array, Array)> =
        (0..3).map(|_| (rand_array(&mut rng, &[5, 16, 16]), rand_array(&mut rng, &[5, 16, 16]))).collect();
    let encode = |g: &mut Graph, x: &Array| {
        let x = g.constant(x.clone());
        net.encoder.forward(g, x)
    };

    let (obs, privilege) = &inputs[0];
    let cfg = GradCheck { only: ids_with_prefix(&agent.params, &["enc", "value"]), ..config(8) };
    let report = check_gradients(&agent.params, &cfg, |g| {
        let f = encode(g, obs)?;
        let fh = encode(g, privilege)?;
        let d = net.disparity(g, f, fh)?;
        let v = net.state_value(g, d)?;
        Ok(g.sum(v))
    })?;
    out.push(BatteryResult { name: "asymmetric encoder + value head", report });

    let scores = |g: &mut Graph| -> Result<Var, NeuralError> {
        let mut z = Vec::new();
        let mut zh = Vec::new();
        for (obs, privilege) in &inputs {
            let f = encode(g, obs)?;
            let fh = encode(g, privilege)?;
            z.push(net.embed(g, f)?);
            zh.push(net.embed(g, fh)?);
        }
        let z = g.concat_rows(&z)?;
        let zh = g.concat_rows(&zh)?;
        net.mi_scores(g, z, zh)
    };
    let only = ids_with_prefix(&agent.params, &["enc", "mi_conv", "mi_mlp", "t_phi"]);
    let cfg = GradCheck { only, ..config(6) };
    let report = check_gradients(&agent.params, &cfg, |g| {
        let s = scores(g)?;
        mi_loss(g, s)
    })?;
    out.push(BatteryResult { name: "mi loss", report });
    let report = check_gradients(&agent.params, &cfg, |g| {
        let s = scores(g)?;
        mi_estimate_var(g, s)
    })?;
    out.push(BatteryResult { name: "mi estimate", report });
    Ok(())
}

/// Runs every check; each result must pass [`BATTERY_TOLERANCE`].
pub fn gradient_battery() -> Result<Vec<BatteryResult>, AgentError> {
    let mut out = Vec::new();
    layer_checks(&mut out)?;
    agent_checks(&mut out)?;
    Ok(out)
}
