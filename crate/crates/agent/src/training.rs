//! Asymmetric actor-critic PPO with the contrastive mutual-information term.

use std::fmt;
use std::io::Write;

use gridex_core::{build_stacks, GroundTruthMap, ObservationStack, PrivilegeStack};
use gridex_neural::optim::clip_grad_norm;
use gridex_neural::{Adam, Array, Graph, NeuralError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::{Episode, EpisodeConfig, EpisodeMetrics};
use crate::policy::{choice_terms, mi_estimate, mi_loss, split_scores, Agent, SelectMode};
use crate::topograph::{History, TopoGraphSet};
use crate::AgentError;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    /// Value loss weight.
    pub c1: f64,
    /// Entropy bonus weight.
    pub c2: f64,
    /// Mutual-information loss weight.
    pub c3: f64,
    pub clip: f64,
    /// Passes over each rollout buffer.
    pub epochs: usize,
    /// Samples per gradient accumulation chunk; also the contrastive batch.
    pub chunk: usize,
    pub max_grad_norm: f64,
    pub robots: usize,
    pub horizon: usize,
    pub max_steps: usize,
    /// Reward per newly explored free cell.
    pub a1: f64,
    /// Reward penalty per planning cycle.
    pub a2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            discount: 0.99,
            gae_lambda: 0.95,
            c1: 3.0,
            c2: 1.0,
            c3: 1.0,
            clip: 0.2,
            epochs: 4,
            chunk: 16,
            max_grad_norm: 0.5,
            robots: 2,
            horizon: 15,
            max_steps: 1800,
            a1: 0.005,
            a2: 0.225,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let nonneg = [self.lr, self.c1, self.c2, self.c3, self.a1, self.a2, self.max_grad_norm];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(AgentError::Config("rates, weights and reward coefficients must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(AgentError::Config("discount and lambda must lie in [0, 1]".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(AgentError::Config(format!("clip {} outside (0, 1)", self.clip)));
        }
        if self.epochs == 0 || self.chunk == 0 || self.robots == 0 || self.horizon == 0 {
            return Err(AgentError::Config("epochs, chunk, robots and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig { robots: self.robots, horizon: self.horizon, max_steps: Some(self.max_steps), ..EpisodeConfig::default() }
    }
}

/// `a1·(area_now − area_prev) − a2`.
pub fn reward(area_now: usize, area_prev: usize, cfg: &TrainConfig) -> f64 {
    cfg.a1 * (area_now as f64 - area_prev as f64) - cfg.a2
}

/// Generalized advantage estimation over one trajectory segment.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + discount * next_value - values[t];
        acc = delta + discount * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// One planning-cycle transition.
#[derive(Clone, Debug)]
pub struct Sample {
    pub obs: ObservationStack,
    pub privilege: PrivilegeStack,
    pub graphs: TopoGraphSet,
    pub choices: Vec<usize>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Explored free cells after the cycle.
    pub area: usize,
    pub done: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub samples: Vec<Sample>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn append(&mut self, other: RolloutBuffer) {
        self.samples.extend(other.samples);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }
}

/// Plays one episode with sampled goals and records every decision. The last
/// segment bootstraps from the critic when the step cap cut it short.
pub fn rollout(world: &GroundTruthMap, agent: &Agent, cfg: &TrainConfig, seed: u64) -> Result<(RolloutBuffer, EpisodeMetrics), AgentError> {
    let ep_cfg = cfg.episode();
    let mut ep = Episode::new(world, &ep_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut history = History::new(cfg.robots);
    let mut buf = RolloutBuffer::default();
    let mut area_prev = 0;
    let mut truncated = false;
    loop {
        if ep.is_complete() {
            break;
        }
        let (pts, clusters) = ep.frontiers();
        if clusters.is_empty() {
            break;
        }
        if ep.out_of_steps() {
            truncated = true;
            break;
        }
        let (obs, privilege) = build_stacks(ep.grid(), world, ep.robots(), &pts, ep.trails())?;
        let d = agent.decide(&obs, ep.robots(), &clusters, ep.grid(), &history, SelectMode::Sample, &mut rng)?;
        let value = agent.value(&obs, &privilege)?;
        let counts = clusters.counts();
        let goals: Vec<_> = d.assignment.choices.iter().map(|&c| Some((clusters.centers[c], counts[c]))).collect();
        let robots_then = ep.robots().to_vec();
        ep.execute(&d.assignment.goals.iter().copied().map(Some).collect::<Vec<_>>());
        history.record(&robots_then, &goals, &d.features);
        let area = ep.explored_free();
        buf.samples.push(Sample {
            obs,
            privilege,
            graphs: d.graphs,
            choices: d.assignment.choices,
            log_prob: d.assignment.log_prob,
            value,
            reward: reward(area, area_prev, cfg),
            area,
            done: false,
        });
        area_prev = area;
    }
    let bootstrap = if truncated && !buf.is_empty() {
        let (pts, _) = ep.frontiers();
        let (obs, privilege) = build_stacks(ep.grid(), world, ep.robots(), &pts, ep.trails())?;
        agent.value(&obs, &privilege)?
    } else {
        0.0
    };
    if let Some(last) = buf.samples.last_mut() {
        last.done = !truncated;
    }
    let rewards: Vec<f64> = buf.samples.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = buf.samples.iter().map(|s| s.value).collect();
    let (adv, ret) = gae(&rewards, &values, bootstrap, cfg.discount, cfg.gae_lambda);
    buf.advantages = adv;
    buf.returns = ret;
    Ok((buf, ep.metrics()))
}

/// Batch means of the loss components, as graph nodes.
pub struct LossTerms {
    pub clip: Var,
    pub value: Var,
    pub entropy: Var,
    /// `None` for a single-sample batch (no negatives).
    pub mi_loss: Option<Var>,
    pub mi_scores: Option<Var>,
}

/// Builds every loss component for a batch of samples.
pub fn loss_terms(
    g: &mut Graph,
    agent: &Agent,
    samples: &[&Sample],
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
) -> Result<LossTerms, AgentError> {
    let net = &agent.net;
    let b = samples.len();
    if b == 0 {
        return Err(AgentError::Config("empty batch".into()));
    }
    let (mut clips, mut vfs, mut ents, mut zs, mut zhs) = (vec![], vec![], vec![], vec![], vec![]);
    for (k, s) in samples.iter().enumerate() {
        let f = net.encode(g, &s.obs.0)?;
        let fh = net.encode(g, &s.privilege.0)?;
        let aff = net.goal_scores(g, f, &s.graphs)?;
        let log_p = net.log_assignment(g, aff)?;
        let (lp, ent) = choice_terms(g, log_p, &s.choices)?;
        let shifted = g.add_scalar(lp, -s.log_prob);
        let ratio = g.exp(shifted);
        let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let a = advantages[k];
        let surr1 = g.scale(ratio, a);
        let surr2 = g.scale(clipped, a);
        clips.push(g.minimum(surr1, surr2)?);
        let d = net.disparity(g, f, fh)?;
        let v = net.state_value(g, d)?;
        let v = g.reshape(v, &[1])?;
        let err = g.add_scalar(v, -returns[k]);
        vfs.push(g.mul(err, err)?);
        ents.push(ent);
        if b > 1 && cfg.c3 > 0.0 {
            zs.push(net.embed(g, f)?);
            zhs.push(net.embed(g, fh)?);
        }
    }
    let mean_of = |g: &mut Graph, parts: &[Var]| -> Result<Var, NeuralError> {
        let rows = parts.iter().map(|&p| g.reshape(p, &[1, 1])).collect::<Result<Vec<_>, _>>()?;
        let all = g.concat_rows(&rows)?;
        Ok(g.mean(all))
    };
    let clip = mean_of(g, &clips)?;
    let value = mean_of(g, &vfs)?;
    let entropy = mean_of(g, &ents)?;
    let (mi_loss_v, mi_scores) = if zs.is_empty() {
        (None, None)
    } else {
        let z = g.concat_rows(&zs)?;
        let zh = g.concat_rows(&zhs)?;
        let t = net.mi_scores(g, z, zh)?;
        (Some(mi_loss(g, t)?), Some(t))
    };
    Ok(LossTerms { clip, value, entropy, mi_loss: mi_loss_v, mi_scores })
}

/// The maximized objective `clip − c1·value + c2·entropy − c3·mi_loss`.
pub fn objective(g: &mut Graph, terms: &LossTerms, cfg: &TrainConfig) -> Result<Var, NeuralError> {
    let v = g.scale(terms.value, -cfg.c1);
    let e = g.scale(terms.entropy, cfg.c2);
    let mut j = g.add(terms.clip, v)?;
    j = g.add(j, e)?;
    if let Some(mi) = terms.mi_loss {
        let m = g.scale(mi, -cfg.c3);
        j = g.add(j, m)?;
    }
    Ok(j)
}

/// Per-update averages of the loss components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub loss_clip: f64,
    pub loss_vf: f64,
    pub entropy: f64,
    pub loss_mi: f64,
    pub mi_estimate: f64,
    pub grad_norm: f64,
}

/// PPO epochs over `buffer`: each epoch shuffles the samples, accumulates
/// gradients chunk by chunk (chunks double as contrastive batches) and
/// takes one Adam step.
pub fn ppo_update(agent: &mut Agent, adam: &mut Adam, buffer: &RolloutBuffer, cfg: &TrainConfig, seed: u64) -> Result<LossReport, AgentError> {
    let n = buffer.len();
    let mut report = LossReport::default();
    if n == 0 {
        return Ok(report);
    }
    let adv = normalize(&buffer.advantages);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mi_count, mut mi_chunks) = (0usize, 0usize);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut acc: Option<Vec<Array>> = None;
        for chunk in order.chunks(cfg.chunk) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &buffer.samples[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| buffer.returns[i]).collect();
            let mut g = Graph::new(&agent.params);
            let terms = loss_terms(&mut g, agent, &samples, &a, &r, cfg)?;
            let j = objective(&mut g, &terms, cfg)?;
            let loss = g.scale(j, -(chunk.len() as f64) / n as f64);
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(AgentError::NonFinite(format!(
                    "loss (clip {}, value {}, entropy {})",
                    g.value(terms.clip).item(),
                    g.value(terms.value).item(),
                    g.value(terms.entropy).item()
                )));
            }
            let w = chunk.len() as f64 / (n * cfg.epochs) as f64;
            report.loss_clip += w * g.value(terms.clip).item();
            report.loss_vf += w * g.value(terms.value).item();
            report.entropy += w * g.value(terms.entropy).item();
            if let (Some(ml), Some(t)) = (terms.mi_loss, terms.mi_scores) {
                report.loss_mi += g.value(ml).item();
                let (pos, neg) = split_scores(g.value(t));
                report.mi_estimate += mi_estimate(&pos, &neg);
                mi_chunks += 1;
                mi_count += 1;
            }
            let grads = g.backward(loss).for_params(&g);
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = acc.expect("at least one chunk");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(AgentError::NonFinite("gradient".into()));
        }
        report.grad_norm += clip_grad_norm(&mut grads, cfg.max_grad_norm) / cfg.epochs as f64;
        adam.step(&mut agent.params, &grads);
    }
    if mi_chunks > 0 {
        report.loss_mi /= mi_chunks as f64;
        report.mi_estimate /= mi_count as f64;
    }
    Ok(report)
}

fn normalize(v: &[f64]) -> Vec<f64> {
    if v.len() < 2 {
        return v.to_vec();
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    let sd = var.sqrt() + 1e-8;
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub mean_steps: f64,
    pub mean_explo_rate: f64,
    pub report: LossReport,
}

impl LogRow {
    pub const HEADER: &'static str = "epoch,mean_steps,mean_explo_rate,loss_clip,loss_vf,entropy,loss_mi,mi_estimate";
}

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        write!(
            f,
            "{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.mean_steps, self.mean_explo_rate, r.loss_clip, r.loss_vf, r.entropy, r.loss_mi, r.mi_estimate
        )
    }
}

/// Alternates seeded rollouts on a set of maps with PPO updates.
pub struct Trainer {
    pub agent: Agent,
    pub adam: Adam,
    pub cfg: TrainConfig,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(agent: Agent, cfg: TrainConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let adam = Adam::new(&agent.params, cfg.lr);
        Ok(Self { agent, adam, cfg, iteration: 0 })
    }

    /// One rollout per map, then one update.
    pub fn iterate(&mut self, worlds: &[GroundTruthMap]) -> Result<LogRow, AgentError> {
        let mut buffer = RolloutBuffer::default();
        let (mut steps, mut rate) = (0.0, 0.0);
        for (m, world) in worlds.iter().enumerate() {
            let seed = self.cfg.seed.wrapping_mul(1_000_003).wrapping_add((self.iteration * worlds.len() + m) as u64);
            let (buf, metrics) = rollout(world, &self.agent, &self.cfg, seed)?;
            steps += metrics.steps_to_completion as f64;
            rate += metrics.exploration_rate;
            buffer.append(buf);
        }
        let update_seed = self.cfg.seed ^ (self.iteration as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let report = ppo_update(&mut self.agent, &mut self.adam, &buffer, &self.cfg, update_seed)?;
        let k = worlds.len().max(1) as f64;
        let row = LogRow { epoch: self.iteration, mean_steps: steps / k, mean_explo_rate: rate / k, report };
        self.iteration += 1;
        Ok(row)
    }

    /// Runs `iterations` updates, writing the CSV log as it goes.
    pub fn train(&mut self, worlds: &[GroundTruthMap], iterations: usize, mut log: impl Write) -> Result<Vec<LogRow>, AgentError> {
        if worlds.is_empty() {
            return Err(AgentError::Config("training needs at least one map".into()));
        }
        writeln!(log, "{}", LogRow::HEADER)?;
        let mut rows = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let row = self.iterate(worlds)?;
            writeln!(log, "{row}")?;
            log.flush()?;
            rows.push(row);
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridex_core::load_world;
    use rand::Rng;

    #[test]
    fn reward_examples() {
        let cfg = TrainConfig::default();
        assert!((reward(50, 50, &cfg) + 0.225).abs() < 1e-15);
        assert!((reward(150, 50, &cfg) - 0.275).abs() < 1e-12);
        let zero = TrainConfig { a1: 0.0, a2: 0.0, ..cfg };
        assert_eq!(reward(150, 50, &zero), 0.0);
    }

    #[test]
    fn gae_single_step_and_td() {
        let (a, r) = gae(&[1.0], &[0.5], 2.0, 0.9, 0.95);
        assert!((a[0] - (1.0 + 0.9 * 2.0 - 0.5)).abs() < 1e-12);
        assert!((r[0] - (a[0] + 0.5)).abs() < 1e-12);
        let rewards = [0.3, -0.2, 0.7];
        let values = [0.1, 0.4, -0.3];
        let (a, _) = gae(&rewards, &values, 0.25, 0.99, 0.0);
        let next = [0.4, -0.3, 0.25];
        for t in 0..3 {
            assert!((a[t] - (rewards[t] + 0.99 * next[t] - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_discounted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let boot = rng.gen_range(-1.0..1.0);
        let (gamma, lambda) = (0.97, 0.9);
        let (a, _) = gae(&rewards, &values, boot, gamma, lambda);
        let v = |t: usize| if t < n { values[t] } else { boot };
        for t in 0..n {
            let mut want = 0.0;
            for l in 0..n - t {
                let delta = rewards[t + l] + gamma * v(t + l + 1) - values[t + l];
                want += (gamma * lambda).powi(l as i32) * delta;
            }
            assert!((a[t] - want).abs() < 1e-12);
        }
    }

    fn small_world() -> GroundTruthMap {
        let rows = [
            "################################",
            "#..............#...............#",
            "#..............#...............#",
            "#..............#...............#",
            "#..............................#",
            "#..............#...............#",
            "#..............#...............#",
            "#######.########.......#########",
            "#..............#...............#",
            "#..............#...............#",
            "#..............................#",
            "#..............#...............#",
            "#..............#...............#",
            "################################",
        ];
        load_world(&rows.join("\n")).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { max_steps: 150, chunk: 4, epochs: 1, lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn rollout_is_reproducible_and_rewards_telescope() {
        let world = small_world();
        let agent = Agent::new(3).unwrap();
        let cfg = quick_cfg();
        let (a, ma) = rollout(&world, &agent, &cfg, 5).unwrap();
        let (b, mb) = rollout(&world, &agent, &cfg, 5).unwrap();
        assert_eq!(ma, mb);
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.obs, y.obs);
            assert_eq!(x.choices, y.choices);
            assert_eq!(x.log_prob.to_bits(), y.log_prob.to_bits());
            assert_eq!(x.value.to_bits(), y.value.to_bits());
        }
        let mut prev = 0;
        for s in &a.samples {
            assert_eq!(s.reward, reward(s.area, prev, &cfg));
            prev = s.area;
        }
        let total: f64 = a.samples.iter().map(|s| s.reward).sum();
        let want = cfg.a1 * prev as f64 - cfg.a2 * a.len() as f64;
        assert!((total - want).abs() < 1e-9);
        assert_eq!(a.advantages.len(), a.len());
        assert!(ma.curve.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zero_step_cap_gives_empty_buffer() {
        let world = small_world();
        let agent = Agent::new(3).unwrap();
        let cfg = TrainConfig { max_steps: 0, ..quick_cfg() };
        let (buf, m) = rollout(&world, &agent, &cfg, 1).unwrap();
        assert!(buf.is_empty());
        assert_eq!(m.steps_to_completion, 0);
        assert_eq!(m.curve, vec![m.exploration_rate]);
    }

    #[test]
    fn objective_recombines_terms() {
        let world = small_world();
        let agent = Agent::new(4).unwrap();
        let cfg = quick_cfg();
        let (buf, _) = rollout(&world, &agent, &cfg, 2).unwrap();
        let samples: Vec<&Sample> = buf.samples.iter().take(3).collect();
        let mut g = Graph::new(&agent.params);
        let terms = loss_terms(&mut g, &agent, &samples, &buf.advantages[..3], &buf.returns[..3], &cfg).unwrap();
        let j = objective(&mut g, &terms, &cfg).unwrap();
        let v = |x: Var| g.value(x).item();
        let want = v(terms.clip) - 3.0 * v(terms.value) + v(terms.entropy) - v(terms.mi_loss.unwrap());
        assert!((v(j) - want).abs() < 1e-12);
        // Fresh policy: every ratio is one, so with zero advantages the
        // clipped term vanishes.
        let mut g = Graph::new(&agent.params);
        let terms = loss_terms(&mut g, &agent, &samples, &[0.0; 3], &buf.returns[..3], &cfg).unwrap();
        assert_eq!(g.value(terms.clip).item(), 0.0);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let world = small_world();
        let mut agent = Agent::new(5).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..quick_cfg() };
        let (buf, _) = rollout(&world, &agent, &cfg, 3).unwrap();
        let before = agent.params.clone();
        let mut adam = Adam::new(&agent.params, 0.0);
        ppo_update(&mut agent, &mut adam, &buf, &cfg, 0).unwrap();
        for ((_, _, a), (_, _, b)) in before.iter().zip(agent.params.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn without_mi_weight_update_ignores_mi_head() {
        let world = small_world();
        let agent = Agent::new(6).unwrap();
        let cfg = TrainConfig { c3: 0.0, ..quick_cfg() };
        let (buf, _) = rollout(&world, &agent, &cfg, 4).unwrap();
        let samples: Vec<&Sample> = buf.samples.iter().take(3).collect();
        let mut g = Graph::new(&agent.params);
        let terms = loss_terms(&mut g, &agent, &samples, &buf.advantages[..3], &buf.returns[..3], &cfg).unwrap();
        assert!(terms.mi_loss.is_none());
        let j = objective(&mut g, &terms, &cfg).unwrap();
        let grads = g.backward(j).for_params(&g);
        let plain = {
            let v = g.scale(terms.value, -cfg.c1);
            let e = g.scale(terms.entropy, cfg.c2);
            let s = g.add(terms.clip, v).unwrap();
            let s = g.add(s, e).unwrap();
            g.backward(s).for_params(&g)
        };
        for (a, b) in grads.iter().zip(&plain) {
            assert_eq!(a, b);
        }
        let t_phi = agent.net.t_phi.layers()[0].weight();
        assert!(grads[t_phi.index()].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn a_small_update_changes_parameters_and_reports_finite_losses() {
        let world = small_world();
        let agent = Agent::new(7).unwrap();
        let mut trainer = Trainer::new(agent, quick_cfg()).unwrap();
        let before = trainer.agent.params.clone();
        let mut log = Vec::new();
        let rows = trainer.train(&[world], 1, &mut log).unwrap();
        let r = &rows[0].report;
        assert!(r.loss_clip.is_finite() && r.loss_vf.is_finite() && r.entropy >= 0.0 && r.loss_mi >= 0.0);
        assert!(trainer.agent.params.all_finite());
        assert!(before.iter().zip(trainer.agent.params.iter()).any(|((_, _, a), (_, _, b))| a != b));
        let text = String::from_utf8(log).unwrap();
        assert!(text.starts_with(LogRow::HEADER));
        assert_eq!(text.lines().count(), 2);
    }
}
