//! The goal policy: a shared map encoder, graph attention over robots,
//! frontiers and history, Sinkhorn matching, plus the critic and the
//! mutual-information head that see privileged maps.

use std::path::Path;

use gridex_core::{Cell, FrontierClusters, GridDims, MapStack, ObservationStack, OccupancyGrid, PrivilegeStack, RobotState};
use gridex_neural::layers::{conv_encoder, ConvStack, GatCross, GatSelf, Mlp};
use gridex_neural::sinkhorn::{log_sinkhorn, row_argmax, DEFAULT_ITERS, DEFAULT_TEMPERATURE};
use gridex_neural::graph::softplus;
use gridex_neural::{Array, Graph, NeuralError, ParameterSet, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::topograph::{build_graph_set, interp_matrix, History, TopoGraphSet, TopoNode, NODE_INPUT};
use crate::AgentError;

/// Channels of the encoded map.
pub const FEATURE_CHANNELS: usize = 32;
/// Node width after encoding: geometry part plus rep part.
pub const NODE_WIDTH: usize = 2 * FEATURE_CHANNELS;
/// Feature grid side the critic input is pooled to.
pub const VALUE_GRID: usize = 8;
/// Critic input length.
pub const DISPARITY_LEN: usize = FEATURE_CHANNELS * VALUE_GRID * VALUE_GRID;
/// Length of the normalized mutual-information embedding.
pub const EMBED_DIM: usize = 64;
/// Initial output bias of the pair scorer.
pub const SCORE_BIAS_INIT: f64 = 2.0;

const NORM_EPS: f64 = 1e-12;

/// Converts a stack to a `[5, H', W']` array, zero-padded so both sides are
/// multiples of 8.
pub fn stack_array(stack: &MapStack) -> Array {
    let (w, h) = (stack.width(), stack.height());
    let (wp, hp) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
    let bytes = stack.as_bytes();
    let channels = bytes.len() / (w * h);
    let mut data = vec![0.0; channels * hp * wp];
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                data[(c * hp + y) * wp + x] = bytes[(c * h + y) * w + x] as f64;
            }
        }
    }
    Array::new(&[channels, hp, wp], data).expect("sizes agree")
}

/// `[hh·wh, 64]` averaging matrix onto an 8×8 grid. Bin `k` along an axis
/// covers input cells `⌊k·n/8⌋ .. ⌈(k+1)·n/8⌉`.
pub fn pool_matrix(hh: usize, wh: usize) -> Array {
    let bins = |n: usize, k: usize| (k * n / VALUE_GRID, ((k + 1) * n).div_ceil(VALUE_GRID));
    let g = VALUE_GRID;
    let mut m = vec![0.0; hh * wh * g * g];
    for oy in 0..g {
        let (y0, y1) = bins(hh, oy);
        for ox in 0..g {
            let (x0, x1) = bins(wh, ox);
            let wt = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    m[(y * wh + x) * g * g + oy * g + ox] = wt;
                }
            }
        }
    }
    Array::new(&[hh * wh, g * g], m).expect("sizes agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    /// Per-robot categorical draw from its Sinkhorn row.
    Sample,
    /// Per-robot most likely cluster.
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalAssignment {
    /// Chosen cluster index per robot.
    pub choices: Vec<usize>,
    pub goals: Vec<Cell>,
    /// `[n_r, n_f]`, rows summing to one.
    pub probs: Array,
    pub log_prob: f64,
}

/// One actor decision together with what it was computed from.
#[derive(Clone, Debug)]
pub struct Decision {
    pub assignment: GoalAssignment,
    pub graphs: TopoGraphSet,
    /// Encoded observation `[32, H/8, W/8]`.
    pub features: Array,
}

/// Layer handles; the weights live in a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub encoder: ConvStack,
    node_mlp: Mlp,
    self_r: GatSelf,
    self_f: GatSelf,
    self_rh: GatSelf,
    self_gh: GatSelf,
    cross_rrh: GatCross,
    cross_fgh: GatCross,
    cross_rf: GatCross,
    pub value_head: Mlp,
    mi_conv: ConvStack,
    mi_mlp: Mlp,
    pub t_phi: Mlp,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
}

impl PolicyNet {
    pub fn new(ps: &mut ParameterSet, rng: &mut impl Rng) -> Result<Self, NeuralError> {
        let c = FEATURE_CHANNELS;
        let net = Self {
            encoder: conv_encoder(ps, "enc", rng)?,
            node_mlp: Mlp::new(ps, "node", &[NODE_INPUT, c, c], rng)?,
            self_r: GatSelf::new(ps, "self_r", NODE_WIDTH, rng)?,
            self_f: GatSelf::new(ps, "self_f", NODE_WIDTH, rng)?,
            self_rh: GatSelf::new(ps, "self_rh", NODE_WIDTH, rng)?,
            self_gh: GatSelf::new(ps, "self_gh", NODE_WIDTH, rng)?,
            cross_rrh: GatCross::new(ps, "cross_rrh", NODE_WIDTH, rng)?,
            cross_fgh: GatCross::new(ps, "cross_fgh", NODE_WIDTH, rng)?,
            cross_rf: GatCross::new(ps, "cross_rf", NODE_WIDTH, rng)?,
            value_head: Mlp::new(ps, "value", &[DISPARITY_LEN, 64, 64, 1], rng)?,
            mi_conv: ConvStack::new(ps, "mi_conv", &[c; 5], &[1; 4], true, rng)?,
            mi_mlp: Mlp::new(ps, "mi_mlp", &[c, EMBED_DIM, EMBED_DIM, EMBED_DIM], rng)?,
            t_phi: Mlp::new(ps, "t_phi", &[1, 16, 1], rng)?,
            temperature: DEFAULT_TEMPERATURE,
            sinkhorn_iters: DEFAULT_ITERS,
        };
        let bias = net.t_phi.layers()[1].bias();
        ps.get_mut(bias).data_mut()[0] = SCORE_BIAS_INIT;
        Ok(net)
    }

    /// `[5, H, W]` stack → `[32, H/8, W/8]`.
    pub fn encode(&self, g: &mut Graph, stack: &MapStack) -> Result<Var, NeuralError> {
        let x = g.constant(stack_array(stack));
        self.encoder.forward(g, x)
    }

    /// `flatten(F − F̂)` as a `[1, 2048]` row; feature grids other than 8×8
    /// are average-pooled to 8×8 first.
    pub fn disparity(&self, g: &mut Graph, f: Var, f_hat: Var) -> Result<Var, NeuralError> {
        let d = g.sub(f, f_hat)?;
        let [c, hh, wh] = g.shape(d)[..] else {
            return Err(NeuralError::Shape(format!("disparity of {:?}", g.shape(d))));
        };
        if (hh, wh) == (VALUE_GRID, VALUE_GRID) {
            return g.reshape(d, &[1, c * hh * wh]);
        }
        let flat = g.reshape(d, &[c, hh * wh])?;
        let pool = g.constant(pool_matrix(hh, wh));
        let pooled = g.matmul(flat, pool)?;
        g.reshape(pooled, &[1, c * VALUE_GRID * VALUE_GRID])
    }

    /// `[1, 2048]` → `[1, 1]`.
    pub fn state_value(&self, g: &mut Graph, disparity: Var) -> Result<Var, NeuralError> {
        self.value_head.forward(g, disparity)
    }

    /// Unit-length `[1, 64]` embedding of an encoded map.
    pub fn embed(&self, g: &mut Graph, f: Var) -> Result<Var, NeuralError> {
        let h = self.mi_conv.forward(g, f)?;
        let [c, hh, wh] = g.shape(h)[..] else { unreachable!("conv output is 3-d") };
        let flat = g.reshape(h, &[c, hh * wh])?;
        let sums = g.sum_axis1(flat)?;
        let pooled = g.scale(sums, 1.0 / (hh * wh) as f64);
        let row = g.reshape(pooled, &[1, c])?;
        let z = self.mi_mlp.forward(g, row)?;
        l2_normalize_rows(g, z)
    }

    /// Pair scores `T[i, j] = T_φ(d_ij)` with `d_ij = ‖z_i − ẑ_j‖ / 2`.
    pub fn mi_scores(&self, g: &mut Graph, z: Var, z_hat: Var) -> Result<Var, NeuralError> {
        let (b, _) = g.value(z).dims2()?;
        let (bh, _) = g.value(z_hat).dims2()?;
        let d = pair_distances(g, z, z_hat)?;
        let col = g.reshape(d, &[b * bh, 1])?;
        let t = self.t_phi.forward(g, col)?;
        g.reshape(t, &[b, bh])
    }

    fn node_block(&self, g: &mut Graph, nodes: &[TopoNode], width: usize, height: usize, rep: Option<Var>) -> Result<Var, NeuralError> {
        let geo: Vec<Vec<f64>> = nodes.iter().map(|n| n.input_features(width, height).to_vec()).collect();
        let geo = g.constant(Array::from_rows(&geo)?);
        let geo = self.node_mlp.forward(g, geo)?;
        let rep = match rep {
            Some(r) => r,
            None => {
                let rows: Vec<Vec<f64>> = nodes.iter().map(|n| n.rep.clone()).collect();
                g.constant(Array::from_rows(&rows)?)
            }
        };
        g.concat_cols(&[geo, rep])
    }

    /// Robot × frontier affinity `[n_r, n_f]`: the pre-normalization scores of
    /// the robot-to-frontier cross attention.
    pub fn goal_scores(&self, g: &mut Graph, f: Var, graphs: &TopoGraphSet) -> Result<Var, NeuralError> {
        if graphs.robots.is_empty() || graphs.frontiers.is_empty() {
            return Err(NeuralError::Degenerate("goal selection needs robots and frontiers".into()));
        }
        let [c, hh, wh] = g.shape(f)[..] else {
            return Err(NeuralError::Shape(format!("features {:?}", g.shape(f))));
        };
        let flat = g.reshape(f, &[c, hh * wh])?;
        let ft = g.transpose(flat)?;
        let (w, h) = (graphs.width, graphs.height);
        let reps = |g: &mut Graph, nodes: &[TopoNode]| -> Result<Var, NeuralError> {
            let pts: Vec<(f64, f64)> = nodes.iter().map(|n| (n.geo[0], n.geo[1])).collect();
            let m = g.constant(interp_matrix(&pts, hh, wh));
            g.matmul(m, ft)
        };
        let rr = reps(g, &graphs.robots)?;
        let rf = reps(g, &graphs.frontiers)?;
        let robots = self.node_block(g, &graphs.robots, w, h, Some(rr))?;
        let frontiers = self.node_block(g, &graphs.frontiers, w, h, Some(rf))?;
        let (mut robots, _) = self.self_r.forward(g, robots)?;
        let (mut frontiers, _) = self.self_f.forward(g, frontiers)?;
        if !graphs.robot_history.is_empty() {
            let rh = self.node_block(g, &graphs.robot_history, w, h, None)?;
            let (rh, _) = self.self_rh.forward(g, rh)?;
            let d = g.constant(graphs.d_rrh.clone());
            robots = self.cross_rrh.forward(g, robots, rh, d)?.nodes;
        }
        if !graphs.goal_history.is_empty() {
            let gh = self.node_block(g, &graphs.goal_history, w, h, None)?;
            let (gh, _) = self.self_gh.forward(g, gh)?;
            let d = g.constant(graphs.d_fgh.clone());
            frontiers = self.cross_fgh.forward(g, frontiers, gh, d)?.nodes;
        }
        let d = g.constant(graphs.d_rf.clone());
        Ok(self.cross_rf.forward(g, robots, frontiers, d)?.logits)
    }

    /// Log assignment probabilities `[n_r, n_f]`, each row a distribution.
    pub fn log_assignment(&self, g: &mut Graph, affinity: Var) -> Result<Var, NeuralError> {
        log_sinkhorn(g, affinity, self.temperature, self.sinkhorn_iters)
    }
}

/// Rows scaled to unit length.
pub fn l2_normalize_rows(g: &mut Graph, z: Var) -> Result<Var, NeuralError> {
    let sq = g.mul(z, z)?;
    let ss = g.sum_axis1(sq)?;
    let ss = g.add_scalar(ss, NORM_EPS);
    let norm = g.sqrt(ss);
    let inv = g.recip(norm);
    g.mul_col(z, inv)
}

/// `[B, B']` half Euclidean distances between rows of `a` and `b`. Row
/// differences are formed explicitly; the expanded `|a|² + |b|² − 2a·b` form
/// cancels badly when embeddings nearly coincide.
pub fn pair_distances(g: &mut Graph, a: Var, b: Var) -> Result<Var, NeuralError> {
    let (na, _) = g.value(a).dims2()?;
    let (nb, _) = g.value(b).dims2()?;
    let pick = |rows: usize, of: usize, sel: &dyn Fn(usize) -> usize| {
        let mut m = Array::zeros(&[rows, of]);
        for r in 0..rows {
            m.data_mut()[r * of + sel(r)] = 1.0;
        }
        m
    };
    let ea = g.constant(pick(na * nb, na, &|r| r / nb));
    let eb = g.constant(pick(na * nb, nb, &|r| r % nb));
    let ra = g.matmul(ea, a)?;
    let rb = g.matmul(eb, b)?;
    let diff = g.sub(ra, rb)?;
    let sq = g.mul(diff, diff)?;
    let d2 = g.sum_axis1(sq)?;
    let d2 = g.add_scalar(d2, NORM_EPS);
    let d = g.sqrt(d2);
    let d = g.scale(d, 0.5);
    g.reshape(d, &[na, nb])
}

/// Contrastive loss over a `[B, B]` score matrix whose diagonal holds the
/// positive pairs: `mean_i(logsumexp_j T_ij − T_ii)`.
pub fn mi_loss(g: &mut Graph, scores: Var) -> Result<Var, NeuralError> {
    let (b, b2) = g.value(scores).dims2()?;
    if b == 0 || b != b2 {
        return Err(NeuralError::Shape(format!("mi loss needs a square nonempty batch, got [{b}, {b2}]")));
    }
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let pos = g.gather_flat(scores, &diag)?;
    let lse = g.logsumexp_axis1(scores)?;
    let gap = g.sub(lse, pos)?;
    Ok(g.mean(gap))
}

fn off_diagonal(b: usize) -> Vec<usize> {
    (0..b).flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| i * b + j)).collect()
}

/// `mean_P softplus(−T) − mean_N softplus(T)`, as a graph node. Needs `B ≥ 2`.
pub fn mi_estimate_var(g: &mut Graph, scores: Var) -> Result<Var, NeuralError> {
    let (b, b2) = g.value(scores).dims2()?;
    if b < 2 || b != b2 {
        return Err(NeuralError::Shape(format!("mi estimate needs a square batch of at least 2, got [{b}, {b2}]")));
    }
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let pos = g.gather_flat(scores, &diag)?;
    let neg = g.gather_flat(scores, &off_diagonal(b))?;
    let npos = g.neg(pos);
    let sp = g.softplus(npos);
    let sn = g.softplus(neg);
    let a = g.mean(sp);
    let c = g.mean(sn);
    g.sub(a, c)
}

/// The same estimate from explicit positive and negative scores. An empty
/// side contributes nothing.
pub fn mi_estimate(positives: &[f64], negatives: &[f64]) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| if v.is_empty() { 0.0 } else { v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64 };
    mean(positives, &|t| softplus(-t)) - mean(negatives, &|t| softplus(t))
}

/// Splits a square score matrix into diagonal and off-diagonal entries.
pub fn split_scores(scores: &Array) -> (Vec<f64>, Vec<f64>) {
    let b = scores.shape()[0];
    let pos = (0..b).map(|i| scores.at2(i, i)).collect();
    let neg = off_diagonal(b).into_iter().map(|k| scores.data()[k]).collect();
    (pos, neg)
}

/// Joint log-probability of `choices` under `log_p`, and the summed row
/// entropies, as graph nodes.
pub fn choice_terms(g: &mut Graph, log_p: Var, choices: &[usize]) -> Result<(Var, Var), NeuralError> {
    let (nr, nf) = g.value(log_p).dims2()?;
    if choices.len() != nr || choices.iter().any(|&c| c >= nf) {
        return Err(NeuralError::Shape(format!("choices {choices:?} do not fit [{nr}, {nf}]")));
    }
    let idx: Vec<usize> = choices.iter().enumerate().map(|(r, &c)| r * nf + c).collect();
    let picked = g.gather_flat(log_p, &idx)?;
    let lp = g.sum(picked);
    let p = g.exp(log_p);
    let plogp = g.mul(p, log_p)?;
    let s = g.sum(plogp);
    Ok((lp, g.neg(s)))
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Turns log assignment probabilities into per-robot choices.
pub fn assign(log_p: &Array, centers: &[Cell], mode: SelectMode, rng: &mut impl Rng) -> GoalAssignment {
    let probs = log_p.map(f64::exp);
    let choices = match mode {
        SelectMode::Argmax => row_argmax(&probs),
        SelectMode::Sample => (0..probs.shape()[0]).map(|r| sample_row(probs.row(r), rng)).collect(),
    };
    let log_prob = choices.iter().enumerate().map(|(r, &c)| log_p.at2(r, c)).sum();
    let goals = choices.iter().map(|&c| centers[c]).collect();
    GoalAssignment { choices, goals, probs, log_prob }
}

/// A policy network together with its weights.
#[derive(Clone, Debug)]
pub struct Agent {
    pub net: PolicyNet,
    pub params: ParameterSet,
}

impl Agent {
    pub fn new(seed: u64) -> Result<Self, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let net = PolicyNet::new(&mut params, &mut rng)?;
        Ok(Self { net, params })
    }

    /// Adopts `params`, which must match the network layout by name and shape.
    pub fn with_params(params: &ParameterSet) -> Result<Self, AgentError> {
        let mut agent = Self::new(0)?;
        agent.params.assign_from(params)?;
        Ok(agent)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        Self::with_params(&ParameterSet::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        Ok(self.params.save(path)?)
    }

    /// Chooses one frontier cluster per robot from the observation alone.
    #[allow(clippy::too_many_arguments)]
    pub fn decide(
        &self,
        obs: &ObservationStack,
        robots: &[RobotState],
        clusters: &FrontierClusters,
        grid: &OccupancyGrid,
        history: &History,
        mode: SelectMode,
        rng: &mut impl Rng,
    ) -> Result<Decision, AgentError> {
        if clusters.is_empty() {
            return Err(AgentError::NoFrontiers);
        }
        let mut g = Graph::new(&self.params);
        let f = self.net.encode(&mut g, &obs.0)?;
        let features = g.value(f).clone();
        let graphs = build_graph_set(robots, clusters, &features, grid, history);
        let aff = self.net.goal_scores(&mut g, f, &graphs)?;
        let log_p = self.net.log_assignment(&mut g, aff)?;
        let log_p = g.value(log_p);
        if !log_p.is_finite() {
            return Err(AgentError::NonFinite("assignment probabilities".into()));
        }
        let assignment = assign(log_p, &clusters.centers, mode, rng);
        Ok(Decision { assignment, graphs, features })
    }

    /// Critic estimate for a state.
    pub fn value(&self, obs: &ObservationStack, privilege: &PrivilegeStack) -> Result<f64, AgentError> {
        let mut g = Graph::new(&self.params);
        let f = self.net.encode(&mut g, &obs.0)?;
        let fh = self.net.encode(&mut g, &privilege.0)?;
        let d = self.net.disparity(&mut g, f, fh)?;
        let v = self.net.state_value(&mut g, d)?;
        Ok(g.value(v).item())
    }
}
