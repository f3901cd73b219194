//! Trainable building blocks. Each layer owns [`ParamId`]s into a shared
//! [`ParameterSet`] and adds its operations to a [`Graph`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParameterSet};
use crate::NeuralError;

/// Width of keys, queries and values in the attention layers.
pub const ATTN_DIM: usize = 32;
/// Hidden width of the fusion MLP.
pub const FUSION_HIDDEN: usize = 64;
/// Hidden width of the cross-attention scoring MLP.
pub const SCORE_HIDDEN: usize = 32;

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(ps: &mut ParameterSet, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self, NeuralError> {
        let w = ps.add_uniform(&format!("{name}.w"), &[input, output], input, rng)?;
        let b = ps.add_uniform(&format!("{name}.b"), &[output], input, rng)?;
        Ok(Self { w, b, input, output })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    /// `x[n, input] -> [n, output]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NeuralError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Fully connected layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(ps: &mut ParameterSet, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Result<Self, NeuralError> {
        if sizes.len() < 2 {
            return Err(NeuralError::Shape(format!("mlp {name} needs at least two sizes")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var, NeuralError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// A stack of 3×3, padding-1 convolutions on `[C,H,W]` inputs.
#[derive(Clone, Debug)]
pub struct ConvStack {
    layers: Vec<ConvLayer>,
    in_channels: usize,
    relu_last: bool,
}

impl ConvStack {
    /// `channels` lists input then per-layer output channels; `strides` has one
    /// entry per layer.
    pub fn new(
        ps: &mut ParameterSet,
        name: &str,
        channels: &[usize],
        strides: &[usize],
        relu_last: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NeuralError> {
        if channels.len() != strides.len() + 1 || strides.is_empty() {
            return Err(NeuralError::Shape(format!("conv stack {name}: channel/stride mismatch")));
        }
        let layers = channels
            .windows(2)
            .zip(strides)
            .enumerate()
            .map(|(i, (c, &stride))| {
                let fan_in = c[0] * 9;
                let w = ps.add_uniform(&format!("{name}.{i}.w"), &[c[1], fan_in], fan_in, rng)?;
                let b = ps.add_uniform(&format!("{name}.{i}.b"), &[c[1]], fan_in, rng)?;
                Ok(ConvLayer { w, b, stride })
            })
            .collect::<Result<_, NeuralError>>()?;
        Ok(Self { layers, in_channels: channels[0], relu_last })
    }

    /// Total spatial downsampling factor.
    pub fn reduction(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var, NeuralError> {
        let shape = g.shape(x).to_vec();
        let r = self.reduction();
        match shape[..] {
            [c, h, w] if c == self.in_channels && h % r == 0 && w % r == 0 && h > 0 && w > 0 => {}
            _ => {
                return Err(NeuralError::Shape(format!(
                    "conv stack expects [{}, H, W] with H, W divisible by {r}, got {shape:?}",
                    self.in_channels
                )))
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.w);
            let b = g.param(layer.b);
            x = g.conv2d(x, w, b, layer.stride)?;
            if self.relu_last || i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

/// The map encoder: five convolutions, 5→16→16→32→32→32 channels, strides
/// 2,1,2,1,2, so a `[5, X, Y]` stack becomes `[32, X/8, Y/8]`.
pub fn conv_encoder(ps: &mut ParameterSet, name: &str, rng: &mut impl Rng) -> Result<ConvStack, NeuralError> {
    ConvStack::new(ps, name, &[5, 16, 16, 32, 32, 32], &[2, 1, 2, 1, 2], false, rng)
}

/// Self-attention over one node set with residual fusion.
///
/// Keys, queries and values are bias-free projections to [`ATTN_DIM`];
/// attention logits are `k_j · q_i`, normalized per row.
#[derive(Clone, Debug)]
pub struct GatSelf {
    wk: ParamId,
    wq: ParamId,
    wu: ParamId,
    rho: Mlp,
    pub width: usize,
}

impl GatSelf {
    pub fn new(ps: &mut ParameterSet, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self, NeuralError> {
        let wk = ps.add_uniform(&format!("{name}.wk"), &[width, ATTN_DIM], width, rng)?;
        let wq = ps.add_uniform(&format!("{name}.wq"), &[width, ATTN_DIM], width, rng)?;
        let wu = ps.add_uniform(&format!("{name}.wu"), &[width, ATTN_DIM], width, rng)?;
        let rho = Mlp::new(ps, &format!("{name}.rho"), &[width + ATTN_DIM, FUSION_HIDDEN, width], rng)?;
        Ok(Self { wk, wq, wu, rho, width })
    }

    /// Returns updated nodes `[N, width]` and the `[N, N]` attention matrix.
    /// Every node attends to every node including itself.
    pub fn forward(&self, g: &mut Graph, nodes: Var) -> Result<(Var, Var), NeuralError> {
        let (n, _) = g.value(nodes).dims2()?;
        if n == 0 {
            return Err(NeuralError::Degenerate("self attention over an empty node set".into()));
        }
        let wk = g.param(self.wk);
        let wq = g.param(self.wq);
        let wu = g.param(self.wu);
        let k = g.matmul(nodes, wk)?;
        let q = g.matmul(nodes, wq)?;
        let u = g.matmul(nodes, wu)?;
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let attn = g.softmax_rows(logits)?;
        let agg = g.matmul(attn, u)?;
        let fused_in = g.concat_cols(&[nodes, agg])?;
        let delta = self.rho.forward(g, fused_in)?;
        Ok((g.add(nodes, delta)?, attn))
    }
}

/// Cross attention from node set A onto node set B, scored by an MLP over
/// `[k_j ‖ q_i ‖ d_ij]`.
#[derive(Clone, Debug)]
pub struct GatCross {
    wk: ParamId,
    wq: ParamId,
    wu: ParamId,
    phi: Mlp,
    rho: Mlp,
    pub width: usize,
}

pub struct CrossOutput {
    pub nodes: Var,
    /// Pre-softmax scores `[N_a, N_b]`.
    pub logits: Var,
    /// Attention coefficients `[N_a, N_b]`, rows summing to one.
    pub attn: Var,
}

impl GatCross {
    pub fn new(ps: &mut ParameterSet, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self, NeuralError> {
        let wk = ps.add_uniform(&format!("{name}.wk"), &[width, ATTN_DIM], width, rng)?;
        let wq = ps.add_uniform(&format!("{name}.wq"), &[width, ATTN_DIM], width, rng)?;
        let wu = ps.add_uniform(&format!("{name}.wu"), &[width, ATTN_DIM], width, rng)?;
        let phi = Mlp::new(ps, &format!("{name}.phi"), &[2 * ATTN_DIM + 1, SCORE_HIDDEN, 1], rng)?;
        let rho = Mlp::new(ps, &format!("{name}.rho"), &[width + ATTN_DIM, FUSION_HIDDEN, width], rng)?;
        Ok(Self { wk, wq, wu, phi, rho, width })
    }

    /// `a: [N_a, width]`, `b: [N_b, width]`, `dists: [N_a, N_b]`.
    pub fn forward(&self, g: &mut Graph, a: Var, b: Var, dists: Var) -> Result<CrossOutput, NeuralError> {
        let (na, _) = g.value(a).dims2()?;
        let (nb, _) = g.value(b).dims2()?;
        if nb == 0 {
            return Err(NeuralError::Degenerate("cross attention onto an empty node set".into()));
        }
        if g.shape(dists) != [na, nb] {
            return Err(NeuralError::Shape(format!("cross distances {:?}, want [{na}, {nb}]", g.shape(dists))));
        }
        if !g.value(dists).is_finite() {
            return Err(NeuralError::Numeric("non-finite cross distance".into()));
        }
        let wk = g.param(self.wk);
        let wq = g.param(self.wq);
        let wu = g.param(self.wu);
        let k = g.matmul(b, wk)?;
        let q = g.matmul(a, wq)?;
        let u = g.matmul(b, wu)?;
        let (ii, jj): (Vec<usize>, Vec<usize>) = (0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).unzip();
        let kj = g.gather_rows(k, &jj)?;
        let qi = g.gather_rows(q, &ii)?;
        let d = g.reshape(dists, &[na * nb, 1])?;
        let pair = g.concat_cols(&[kj, qi, d])?;
        let scores = self.phi.forward(g, pair)?;
        let logits = g.reshape(scores, &[na, nb])?;
        let attn = g.softmax_rows(logits)?;
        let agg = g.matmul(attn, u)?;
        let fused_in = g.concat_cols(&[a, agg])?;
        let delta = self.rho.forward(g, fused_in)?;
        let nodes = g.add(a, delta)?;
        Ok(CrossOutput { nodes, logits, attn })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_nodes(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Array {
        Array::new(&[n, w], (0..n * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn encoder_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let enc = conv_encoder(&mut ps, "enc", &mut rng).unwrap();
        let mut g = Graph::new(&ps);
        let x = g.constant(Array::zeros(&[5, 64, 64]));
        let y = enc.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[32, 8, 8]);
        let bad = g.constant(Array::zeros(&[5, 60, 64]));
        assert!(matches!(enc.forward(&mut g, bad), Err(NeuralError::Shape(_))));
    }

    #[test]
    fn encoder_zero_in_zero_out_with_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let enc = conv_encoder(&mut ps, "enc", &mut rng).unwrap();
        for id in enc.params().into_iter().skip(1).step_by(2) {
            ps.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new(&ps);
        let x = g.constant(Array::zeros(&[5, 16, 16]));
        let y = enc.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn self_attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParameterSet::new();
        let gat = GatSelf::new(&mut ps, "gat", 8, &mut rng).unwrap();
        let x = rand_nodes(&mut rng, 6, 8);
        let mut g = Graph::new(&ps);
        let xv = g.constant(x);
        let (_, attn) = gat.forward(&mut g, xv).unwrap();
        for i in 0..6 {
            let s: f64 = g.value(attn).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_nodes_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::new();
        let gat = GatSelf::new(&mut ps, "gat", 4, &mut rng).unwrap();
        let row = vec![0.3, -0.2, 0.9, 0.1];
        let x = Array::from_rows(&[row.clone(), row]).unwrap();
        let mut g = Graph::new(&ps);
        let xv = g.constant(x);
        let (y, _) = gat.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y).row(0), g.value(y).row(1));
    }

    #[test]
    fn cross_single_target_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParameterSet::new();
        let gat = GatCross::new(&mut ps, "x", 6, &mut rng).unwrap();
        let a = rand_nodes(&mut rng, 3, 6);
        let b = rand_nodes(&mut rng, 1, 6);
        let mut g = Graph::new(&ps);
        let (av, bv) = (g.constant(a), g.constant(b));
        let d = g.constant(Array::new(&[3, 1], vec![0.1, 0.7, 2.0]).unwrap());
        let out = gat.forward(&mut g, av, bv, d).unwrap();
        assert!(g.value(out.attn).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cross_distance_change_is_row_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParameterSet::new();
        let gat = GatCross::new(&mut ps, "x", 6, &mut rng).unwrap();
        let a = rand_nodes(&mut rng, 3, 6);
        let b = rand_nodes(&mut rng, 4, 6);
        let dist: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut doubled = dist.clone();
        doubled[4 + 2] *= 2.0;
        let run = |d: Vec<f64>| {
            let mut g = Graph::new(&ps);
            let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
            let dv = g.constant(Array::new(&[3, 4], d).unwrap());
            let out = gat.forward(&mut g, av, bv, dv).unwrap();
            g.value(out.attn).clone()
        };
        let (p, q) = (run(dist), run(doubled));
        assert_eq!(p.row(0), q.row(0));
        assert_eq!(p.row(2), q.row(2));
        assert_ne!(p.row(1), q.row(1));
    }

    #[test]
    fn empty_targets_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParameterSet::new();
        let gat = GatCross::new(&mut ps, "x", 4, &mut rng).unwrap();
        let mut g = Graph::new(&ps);
        let a = g.constant(Array::zeros(&[2, 4]));
        let b = g.constant(Array::zeros(&[0, 4]));
        let d = g.constant(Array::zeros(&[2, 0]));
        assert!(matches!(gat.forward(&mut g, a, b, d), Err(NeuralError::Degenerate(_))));
    }
}
