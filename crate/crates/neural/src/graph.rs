//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse insertion order, so gradient
//! accumulation order is fixed by construction order.

use crate::array::{gemm, Array};
use crate::params::{ParamId, ParameterSet};
use crate::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sqrt(Var),
    Recip(Var),
    Tanh(Var),
    Sum(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    LseAxis0(Var),
    LseAxis1(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GatherFlat(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(msg: String) -> NeuralError {
    NeuralError::Shape(msg)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            other => parents(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The graph node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.params.get(id).clone();
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NeuralError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize), NeuralError> {
        self.value(v).dims2()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let v = crate::array::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x[n,m] + v[m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        if self.value(v).len() != m {
            return Err(shape_err(format!("add_row: {:?} + {:?}", self.shape(x), self.shape(v))));
        }
        let (xv, vv) = (self.value(x), self.value(v));
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += vv.data()[j];
            }
        }
        let out = Array::new(&[n, m], out)?;
        Ok(self.push(out, Op::AddRow(x, v)))
    }

    /// `x[n,m] + v[n]` broadcast over columns.
    pub fn add_col(&mut self, x: Var, v: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        if self.value(v).len() != n {
            return Err(shape_err(format!("add_col: {:?} + {:?}", self.shape(x), self.shape(v))));
        }
        let (xv, vv) = (self.value(x), self.value(v));
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += vv.data()[i];
            }
        }
        let out = Array::new(&[n, m], out)?;
        Ok(self.push(out, Op::AddCol(x, v)))
    }

    /// Scales row `i` of `x[n,m]` by `v[i]`.
    pub fn mul_col(&mut self, x: Var, v: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        if self.value(v).len() != n {
            return Err(shape_err(format!("mul_col: {:?} * {:?}", self.shape(x), self.shape(v))));
        }
        let (xv, vv) = (self.value(x), self.value(v));
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] *= vv.data()[i];
            }
        }
        let out = Array::new(&[n, m], out)?;
        Ok(self.push(out, Op::MulCol(x, v)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// `log(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums of `x[n,m]`, shape `[m]`.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += xv[i * m + j];
            }
        }
        Ok(self.push(Array::vector(out), Op::SumAxis0(x)))
    }

    /// Row sums of `x[n,m]`, shape `[n]`.
    pub fn sum_axis1(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        let xv = self.value(x).data();
        let out = (0..n).map(|i| xv[i * m..(i + 1) * m].iter().sum()).collect();
        Ok(self.push(Array::vector(out), Op::SumAxis1(x)))
    }

    /// Column-wise log-sum-exp, shape `[m]`.
    pub fn logsumexp_axis0(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        let xv = self.value(x).data();
        let out = (0..m).map(|j| logsumexp((0..n).map(|i| xv[i * m + j]))).collect();
        Ok(self.push(Array::vector(out), Op::LseAxis0(x)))
    }

    /// Row-wise log-sum-exp, shape `[n]`.
    pub fn logsumexp_axis1(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        let xv = self.value(x).data();
        let out = (0..n).map(|i| logsumexp(xv[i * m..(i + 1) * m].iter().copied())).collect();
        Ok(self.push(Array::vector(out), Op::LseAxis1(x)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        if m == 0 {
            return Err(NeuralError::Degenerate("softmax over an empty row".into()));
        }
        let out = softmax_rows(self.value(x).data(), n, m);
        let out = Array::new(&[n, m], out)?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        if m == 0 {
            return Err(NeuralError::Degenerate("softmax over an empty row".into()));
        }
        let xv = self.value(x).data();
        let mut out = xv.to_vec();
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            let l = logsumexp(row.iter().copied());
            row.iter_mut().for_each(|v| *v -= l);
        }
        let out = Array::new(&[n, m], out)?;
        Ok(self.push(out, Op::LogSoftmaxRows(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NeuralError> {
        self.dims2(x)?;
        let v = self.value(x).transpose();
        Ok(self.push(v, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NeuralError> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let n = self.dims2(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != n {
                return Err(shape_err(format!("concat_cols: {r} rows vs {n}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Array::new(&[n, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let m = self.dims2(parts[0])?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if c != m {
                return Err(shape_err(format!("concat_rows: {c} cols vs {m}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Array::new(&[rows, m], out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows of `x` selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NeuralError> {
        let (n, m) = self.dims2(x)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(shape_err(format!("gather_rows: row {i} of {n}")));
            }
            out.extend_from_slice(&xv[i * m..(i + 1) * m]);
        }
        let out = Array::new(&[idx.len(), m], out)?;
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec())))
    }

    /// Entries of the flattened `x` at `idx`, shape `[idx.len()]`.
    pub fn gather_flat(&mut self, x: Var, idx: &[usize]) -> Result<Var, NeuralError> {
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            out.push(*xv.get(i).ok_or_else(|| shape_err(format!("gather_flat: index {i} of {}", xv.len())))?);
        }
        Ok(self.push(Array::vector(out), Op::GatherFlat(x, idx.to_vec())))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.same_shape(a, b, "minimum")?;
        let v = self.value(a).zip(self.value(b), f64::min);
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    /// 3×3 convolution with padding 1.
    ///
    /// `x` is `[C,H,W]`, `w` is `[C_out, C·9]`, `b` is `[C_out]`; output is
    /// `[C_out, H_out, W_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, NeuralError> {
        let (c, h, wd) = match self.shape(x) {
            &[c, h, w] => (c, h, w),
            s => return Err(shape_err(format!("conv2d input must be [C,H,W], got {s:?}"))),
        };
        let (co, r) = self.dims2(w)?;
        if r != c * 9 || self.value(b).len() != co || stride == 0 {
            return Err(shape_err(format!(
                "conv2d weights {:?} / bias {:?} do not fit input {:?}",
                self.shape(w),
                self.shape(b),
                self.shape(x)
            )));
        }
        let (ho, wo) = conv_out(h, wd, stride);
        let cols = im2col(self.value(x).data(), c, h, wd, stride, ho, wo);
        let p = ho * wo;
        let mut out = vec![0.0; co * p];
        for (k, &bk) in self.value(b).data().iter().enumerate() {
            out[k * p..(k + 1) * p].fill(bk);
        }
        gemm(co, r, p, self.value(w).data(), false, &cols, false, &mut out, 1.0);
        let out = Array::new(&[co, ho, wo], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, stride }))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Array| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip(val(*b), |g, b| g * b));
                acc(*b, g.zip(val(*a), |g, a| g * a));
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, val(*b).data(), true, &mut da, 0.0);
                    acc(*a, Array::new(&[m, k], da).unwrap());
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), true, g.data(), false, &mut db, 0.0);
                    acc(*b, Array::new(&[k, n], db).unwrap());
                }
            }
            Op::AddRow(x, v) => {
                let (n, m) = g.dims2().unwrap();
                acc(*x, g.clone());
                let mut dv = vec![0.0; m];
                for row in g.data().chunks(m).take(n) {
                    for (d, x) in dv.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*v, Array::new(val(*v).shape(), dv).unwrap());
            }
            Op::AddCol(x, v) => {
                let (n, m) = g.dims2().unwrap();
                acc(*x, g.clone());
                let dv = (0..n).map(|r| g.data()[r * m..(r + 1) * m].iter().sum()).collect();
                acc(*v, Array::new(val(*v).shape(), dv).unwrap());
            }
            Op::MulCol(x, v) => {
                let (n, m) = g.dims2().unwrap();
                let (xv, vv) = (val(*x).data(), val(*v).data());
                let mut dx = g.data().to_vec();
                let mut dv = vec![0.0; n];
                for r in 0..n {
                    for c in 0..m {
                        let k = r * m + c;
                        dx[k] *= vv[r];
                        dv[r] += g.data()[k] * xv[k];
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
                acc(*v, Array::new(val(*v).shape(), dv).unwrap());
            }
            Op::Relu(a) => acc(*a, g.zip(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Exp(a) => acc(*a, g.zip(y, |g, y| g * y)),
            Op::Log(a) => acc(*a, g.zip(val(*a), |g, x| g / x)),
            Op::Softplus(a) => acc(*a, g.zip(val(*a), |g, x| g * sigmoid(x))),
            Op::Sqrt(a) => acc(*a, g.zip(y, |g, y| 0.5 * g / y)),
            Op::Recip(a) => acc(*a, g.zip(y, |g, y| -g * y * y)),
            Op::Tanh(a) => acc(*a, g.zip(y, |g, y| g * (1.0 - y * y))),
            Op::Sum(a) => acc(*a, Array::full(val(*a).shape(), g.item())),
            Op::SumAxis0(x) => {
                let (n, m) = val(*x).dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    dx[r * m..(r + 1) * m].copy_from_slice(g.data());
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::SumAxis1(x) => {
                let (n, m) = val(*x).dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    dx[r * m..(r + 1) * m].fill(g.data()[r]);
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::LseAxis0(x) => {
                let (n, m) = val(*x).dims2().unwrap();
                let xv = val(*x).data();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        dx[r * m + c] = g.data()[c] * (xv[r * m + c] - y.data()[c]).exp();
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::LseAxis1(x) => {
                let (n, m) = val(*x).dims2().unwrap();
                let xv = val(*x).data();
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        dx[r * m + c] = g.data()[r] * (xv[r * m + c] - y.data()[r]).exp();
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::SoftmaxRows(x) => {
                let (n, m) = y.dims2().unwrap();
                let (yv, gv) = (y.data(), g.data());
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    let s = r * m..(r + 1) * m;
                    let dot: f64 = yv[s.clone()].iter().zip(&gv[s.clone()]).map(|(a, b)| a * b).sum();
                    for k in s {
                        dx[k] = yv[k] * (gv[k] - dot);
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::LogSoftmaxRows(x) => {
                let (n, m) = y.dims2().unwrap();
                let (yv, gv) = (y.data(), g.data());
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    let s = r * m..(r + 1) * m;
                    let total: f64 = gv[s.clone()].iter().sum();
                    for k in s {
                        dx[k] = gv[k] - yv[k].exp() * total;
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Reshape(x) => acc(*x, g.clone().reshape(val(*x).shape()).unwrap()),
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    let mut d = Vec::with_capacity(n * w);
                    for r in 0..n {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, Array::new(&[n, w], d).unwrap());
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    let d = g.data()[offset..offset + len].to_vec();
                    acc(p, Array::new(val(p).shape(), d).unwrap());
                    offset += len;
                }
            }
            Op::GatherRows(x, idx) => {
                let (n, m) = val(*x).dims2().unwrap();
                let mut dx = vec![0.0; n * m];
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..m {
                        dx[r * m + c] += g.data()[k * m + c];
                    }
                }
                acc(*x, Array::new(&[n, m], dx).unwrap());
            }
            Op::GatherFlat(x, idx) => {
                let mut dx = Array::zeros(val(*x).shape());
                for (k, &i) in idx.iter().enumerate() {
                    dx.data_mut()[i] += g.data()[k];
                }
                acc(*x, dx);
            }
            Op::Clamp(x, lo, hi) => {
                acc(*x, g.zip(val(*x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 }));
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mask_a = av.zip(bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                acc(*a, g.zip(&mask_a, |g, m| g * m));
                acc(*b, g.zip(&mask_a, |g, m| g * (1.0 - m)));
            }
            Op::Conv2d { x, w, b, stride } => {
                let (c, h, wd) = match *val(*x).shape() {
                    [c, h, w] => (c, h, w),
                    _ => unreachable!(),
                };
                let (co, r) = val(*w).dims2().unwrap();
                let (ho, wo) = conv_out(h, wd, *stride);
                let p = ho * wo;
                let gv = g.data();
                if self.nodes[b.0].needs_grad {
                    let db = (0..co).map(|k| gv[k * p..(k + 1) * p].iter().sum()).collect();
                    acc(*b, Array::vector(db));
                }
                if self.nodes[w.0].needs_grad {
                    let cols = im2col(val(*x).data(), c, h, wd, *stride, ho, wo);
                    let mut dw = vec![0.0; co * r];
                    gemm(co, p, r, gv, false, &cols, true, &mut dw, 0.0);
                    acc(*w, Array::new(&[co, r], dw).unwrap());
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcols = vec![0.0; r * p];
                    gemm(r, co, p, val(*w).data(), true, gv, false, &mut dcols, 0.0);
                    let dx = col2im(&dcols, c, h, wd, *stride, ho, wo);
                    acc(*x, Array::new(&[c, h, wd], dx).unwrap());
                }
            }
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Minimum(a, b) => vec![*a, *b],
        Op::AddRow(a, b) | Op::AddCol(a, b) | Op::MulCol(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::AddScalar(a) | Op::Clamp(a, _, _) => vec![*a],
        Op::Relu(a) | Op::Exp(a) | Op::Log(a) | Op::Softplus(a) | Op::Sqrt(a) | Op::Recip(a) | Op::Tanh(a) => vec![*a],
        Op::Sum(a) | Op::SumAxis0(a) | Op::SumAxis1(a) | Op::LseAxis0(a) | Op::LseAxis1(a) => vec![*a],
        Op::SoftmaxRows(a) | Op::LogSoftmaxRows(a) | Op::Transpose(a) | Op::Reshape(a) => vec![*a],
        Op::GatherRows(a, _) | Op::GatherFlat(a, _) => vec![*a],
        Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
        Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    /// One gradient per parameter of `graph`'s set; parameters the loss does
    /// not touch get zeros.
    pub fn for_params(&self, graph: &Graph) -> Vec<Array> {
        graph
            .params
            .iter()
            .map(|(id, _, value)| {
                graph.param_vars[id.index()]
                    .and_then(|v| self.grads[v.0].clone())
                    .unwrap_or_else(|| Array::zeros(value.shape()))
            })
            .collect()
    }
}

pub(crate) fn conv_out(h: usize, w: usize, stride: usize) -> (usize, usize) {
    ((h + 2 - 3) / stride + 1, (w + 2 - 3) / stride + 1)
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let mut cols = vec![0.0; c * 9 * p];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * wo + ox] = x[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let p = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * p;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[(ci * h + iy as usize) * w + ix as usize] += cols[row + oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_rows(x: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
