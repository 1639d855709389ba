//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so the tape is already in topological order and
//! [`Graph::backward`] simply walks it in reverse, applying each op's
//! vector-Jacobian product.

use super::tensor::{gemm, Tensor};
use super::NnError;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Concat(Vec<Var>),
    SliceLast { x: Var, start: usize },
    Reshape(Var),
    SelectTime { x: Var, t: usize },
    Mean { x: Var, axes: Vec<usize> },
    SumAll(Var),
    GraphMix { x: Var, adj: Arc<SparseAdjacency> },
    TemporalConv { x: Var, w: Var },
    SoftmaxXent { logits: Var, targets: Arc<Tensor> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Nonzero entries `(row, col, value)` of a square node-mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    pub nodes: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseAdjacency {
    pub fn from_dense(m: &Tensor) -> Result<Self, NnError> {
        let shape = m.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(NnError::Shape(format!("adjacency must be square, got {shape:?}")));
        }
        let v = shape[0];
        let entries = (0..v)
            .flat_map(|r| (0..v).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let a = m.data()[r * v + c];
                (a != 0.0).then_some((r, c, a))
            })
            .collect();
        Ok(Self { nodes: v, entries })
    }
}

/// Gradients produced by [`Graph::backward`], indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest distance from zero of any ReLU input, infinite without
    /// ReLUs. Finite-difference checks need it to exceed their step.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.push(t, Op::Leaf, true, "param")
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, NnError> {
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var, NnError> {
        if requires_grad {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    /// Contracts the last axis of `a` with the first axis of the matrix `b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(shape_err(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let (k, n) = (bv.shape()[0], bv.shape()[1]);
        let m = av.len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), k, 1, bv.data(), n, 1, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), ng, "matmul")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "{what} {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        self.same_shape(a, b, name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, op, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.last_dim();
        if bv.shape() != [n] {
            return Err(shape_err(format!("bias {:?} for input {:?}", bv.shape(), xv.shape())));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        self.push(out, Op::AddBias(x, b), ng, "add_bias")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NnError> {
        let out = self.value(x).map(|v| v * s);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var, NnError> {
        let out = self.value(x).map(|v| v + s);
        let ng = self.needs(x);
        self.push(out, Op::AddScalar(x), ng, "add_scalar")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        let out = self.value(x).map(f64::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng, "relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NnError> {
        let out = self.value(x).map(f64::exp);
        let ng = self.needs(x);
        self.push(out, Op::Exp(x), ng, "exp")
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        let Some(&first) = xs.first() else {
            return Err(shape_err("concat of nothing".into()));
        };
        let lead = &self.value(first).shape()[..self.value(first).shape().len() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if &s[..s.len() - 1] != lead {
                return Err(shape_err(format!("concat leading axes {lead:?} vs {s:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(Tensor::new(&shape, out)?, Op::Concat(xs.to_vec()), ng, "concat")
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let w = xv.last_dim();
        if len == 0 || start + len > w {
            return Err(shape_err(format!("slice {start}..{} of width {w}", start + len)));
        }
        let out: Vec<f64> = xv
            .data()
            .chunks_exact(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.needs(x);
        self.push(Tensor::new(&shape, out)?, Op::SliceLast { x, start }, ng, "slice_last")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let out = self.value(x).reshaped(shape)?;
        let ng = self.needs(x);
        self.push(out, Op::Reshape(x), ng, "reshape")
    }

    /// `x[:, t, ...]` for `x` of shape `[B, T, ...]`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 3 || t >= s[1] {
            return Err(shape_err(format!("select_time {t} of {s:?}")));
        }
        let inner: usize = s[2..].iter().product();
        let mut out = Vec::with_capacity(s[0] * inner);
        for b in 0..s[0] {
            let base = (b * s[1] + t) * inner;
            out.extend_from_slice(&xv.data()[base..base + inner]);
        }
        let mut shape = vec![s[0]];
        shape.extend_from_slice(&s[2..]);
        let ng = self.needs(x);
        self.push(Tensor::new(&shape, out)?, Op::SelectTime { x, t }, ng, "select_time")
    }

    /// Mean over the given axes, which are removed from the shape.
    pub fn mean_over(&mut self, x: Var, axes: &[usize]) -> Result<Var, NnError> {
        let xv = self.value(x);
        let shape = xv.shape();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.is_empty() || axes.iter().any(|&a| a >= shape.len()) {
            return Err(shape_err(format!("mean over {axes:?} of {shape:?}")));
        }
        let (out_shape, count) = reduced_shape(shape, &axes);
        let mut out = vec![0.0; out_shape.iter().product()];
        for_each_reduced(shape, &axes, |i, o| out[o] += xv.data()[i]);
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let ng = self.needs(x);
        self.push(Tensor::new(&out_shape, out)?, Op::Mean { x, axes }, ng, "mean_over")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng, "sum_all")
    }

    /// Mixes node features: `y[.., v, c] = Σ_u A[v, u] · x[.., u, c]` for
    /// `x` of shape `[.., V, C]`.
    pub fn graph_mix(&mut self, x: Var, adj: &Arc<SparseAdjacency>) -> Result<Var, NnError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 2 || s[s.len() - 2] != adj.nodes {
            return Err(shape_err(format!("graph_mix over {} nodes for {s:?}", adj.nodes)));
        }
        let c = s[s.len() - 1];
        let v = adj.nodes;
        let mut out = vec![0.0; xv.len()];
        for (xr, yr) in xv.data().chunks_exact(v * c).zip(out.chunks_exact_mut(v * c)) {
            for &(row, col, a) in &adj.entries {
                let src = &xr[col * c..(col + 1) * c];
                for (y, x) in yr[row * c..(row + 1) * c].iter_mut().zip(src) {
                    *y += a * x;
                }
            }
        }
        let shape = s.to_vec();
        let ng = self.needs(x);
        self.push(
            Tensor::new(&shape, out)?,
            Op::GraphMix {
                x,
                adj: Arc::clone(adj),
            },
            ng,
            "graph_mix",
        )
    }

    /// Same-padded temporal convolution. `x` is `[B, T, V, Cin]`, `w` is
    /// `[k, Cin, Cout]` with odd `k`; tap `j` reads frame `t + j - k/2`.
    pub fn temporal_conv(&mut self, x: Var, w: Var) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 3 || ws[1] != xs[3] || ws[0] % 2 == 0 {
            return Err(shape_err(format!("temporal_conv {xs:?} with kernel {ws:?}")));
        }
        let (b, t, v) = (xs[0], xs[1], xs[2]);
        let (k, ci, co) = (ws[0], ws[1], ws[2]);
        let mut out = vec![0.0; b * t * v * co];
        for bi in 0..b {
            for j in 0..k {
                let Some((t0, t1, shift)) = tap_range(t, j, k) else { continue };
                let rows = (t1 - t0) * v;
                let in_row = (bi * t + (t0 as isize + shift) as usize) * v;
                let out_row = (bi * t + t0) * v;
                gemm(
                    rows,
                    ci,
                    co,
                    &xv.data()[in_row * ci..],
                    ci,
                    1,
                    &wv.data()[j * ci * co..],
                    co,
                    1,
                    &mut out[out_row * co..],
                    true,
                );
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push(Tensor::new(&[b, t, v, co], out)?, Op::TemporalConv { x, w }, ng, "temporal_conv")
    }

    /// Mean over the batch of `-Σ_c targets[b,c] · log softmax(logits[b])_c`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var, NnError> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape() != targets.shape() {
            return Err(shape_err(format!(
                "cross-entropy logits {:?} vs targets {:?}",
                lv.shape(),
                targets.shape()
            )));
        }
        let c = lv.shape()[1];
        let batch = lv.shape()[0];
        let mut loss = 0.0;
        for (z, t) in lv.data().chunks_exact(c).zip(targets.data().chunks_exact(c)) {
            let lse = log_sum_exp(z);
            loss -= z.iter().zip(t).map(|(&zi, &ti)| ti * (zi - lse)).sum::<f64>();
        }
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(loss / batch as f64),
            Op::SoftmaxXent {
                logits,
                targets: Arc::new(targets),
            },
            ng,
            "softmax_cross_entropy",
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.vjp(&node.op, &node.value, &gy, &mut grads)?;
        }
        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(NnError::NonFinite("gradient"));
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn vjp(&self, op: &Op, y: &Tensor, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NnError> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k;
                if self.needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gy.data(), n, 1, bv.data(), 1, n, &mut ga, false);
                    self.acc(grads, a, Tensor::new(av.shape(), ga)?);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), 1, k, gy.data(), n, 1, &mut gb, false);
                    self.acc(grads, b, Tensor::new(bv.shape(), gb)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, a, gy.clone());
                self.acc(grads, b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, a, gy.clone());
                self.acc(grads, b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.needs(a) {
                    let d = gy.data().iter().zip(bv.data()).map(|(g, x)| g * x).collect();
                    self.acc(grads, a, Tensor::new(av.shape(), d)?);
                }
                if self.needs(b) {
                    let d = gy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    self.acc(grads, b, Tensor::new(bv.shape(), d)?);
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, x, gy.clone());
                if self.needs(b) {
                    let n = self.value(b).len();
                    let mut gb = vec![0.0; n];
                    for row in gy.data().chunks_exact(n) {
                        for (acc, g) in gb.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    self.acc(grads, b, Tensor::from_vec(gb));
                }
            }
            Op::Scale(x, s) => self.acc(grads, x, gy.map(|g| g * s)),
            Op::AddScalar(x) => self.acc(grads, x, gy.clone()),
            Op::Sigmoid(x) => self.acc(grads, x, unary_grad(gy, y, |y| y * (1.0 - y))),
            Op::Tanh(x) => self.acc(grads, x, unary_grad(gy, y, |y| 1.0 - y * y)),
            Op::Relu(x) => self.acc(grads, x, unary_grad(gy, y, |y| if y > 0.0 { 1.0 } else { 0.0 })),
            Op::Exp(x) => self.acc(grads, x, unary_grad(gy, y, |y| y)),
            Op::Concat(ref xs) => {
                let total = y.last_dim();
                let rows = y.len() / total;
                let mut offset = 0;
                for &x in xs {
                    let xv = self.value(x);
                    let w = xv.last_dim();
                    if self.needs(x) {
                        let mut g = Vec::with_capacity(xv.len());
                        for r in 0..rows {
                            let base = r * total + offset;
                            g.extend_from_slice(&gy.data()[base..base + w]);
                        }
                        self.acc(grads, x, Tensor::new(xv.shape(), g)?);
                    }
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(x);
                let (w, len) = (xv.last_dim(), y.last_dim());
                let mut g = vec![0.0; xv.len()];
                for (dst, src) in g.chunks_exact_mut(w).zip(gy.data().chunks_exact(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                self.acc(grads, x, Tensor::new(xv.shape(), g)?);
            }
            Op::Reshape(x) => self.acc(grads, x, gy.reshaped(self.value(x).shape())?),
            Op::SelectTime { x, t } => {
                let xv = self.value(x);
                let s = xv.shape();
                let inner: usize = s[2..].iter().product();
                let mut g = vec![0.0; xv.len()];
                for b in 0..s[0] {
                    let base = (b * s[1] + t) * inner;
                    g[base..base + inner].copy_from_slice(&gy.data()[b * inner..(b + 1) * inner]);
                }
                self.acc(grads, x, Tensor::new(s, g)?);
            }
            Op::Mean { x, ref axes } => {
                let xv = self.value(x);
                let (_, count) = reduced_shape(xv.shape(), axes);
                let inv = 1.0 / count as f64;
                let mut g = vec![0.0; xv.len()];
                for_each_reduced(xv.shape(), axes, |i, o| g[i] = gy.data()[o] * inv);
                self.acc(grads, x, Tensor::new(xv.shape(), g)?);
            }
            Op::SumAll(x) => {
                let xv = self.value(x);
                self.acc(grads, x, Tensor::filled(xv.shape(), gy.item()));
            }
            Op::GraphMix { x, ref adj } => {
                let xv = self.value(x);
                let c = xv.last_dim();
                let v = adj.nodes;
                let mut g = vec![0.0; xv.len()];
                for (gr, gyr) in g.chunks_exact_mut(v * c).zip(gy.data().chunks_exact(v * c)) {
                    for &(row, col, a) in &adj.entries {
                        let src = &gyr[row * c..(row + 1) * c];
                        for (dst, s) in gr[col * c..(col + 1) * c].iter_mut().zip(src) {
                            *dst += a * s;
                        }
                    }
                }
                self.acc(grads, x, Tensor::new(xv.shape(), g)?);
            }
            Op::TemporalConv { x, w } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (xs, ws) = (xv.shape(), wv.shape());
                let (b, t, v) = (xs[0], xs[1], xs[2]);
                let (k, ci, co) = (ws[0], ws[1], ws[2]);
                let mut gx = self.needs(x).then(|| vec![0.0; xv.len()]);
                let mut gw = self.needs(w).then(|| vec![0.0; wv.len()]);
                for bi in 0..b {
                    for j in 0..k {
                        let Some((t0, t1, shift)) = tap_range(t, j, k) else { continue };
                        let rows = (t1 - t0) * v;
                        let in_row = (bi * t + (t0 as isize + shift) as usize) * v;
                        let out_row = (bi * t + t0) * v;
                        let gy_block = &gy.data()[out_row * co..];
                        if let Some(gw) = gw.as_mut() {
                            gemm(
                                ci,
                                rows,
                                co,
                                &xv.data()[in_row * ci..],
                                1,
                                ci,
                                gy_block,
                                co,
                                1,
                                &mut gw[j * ci * co..],
                                true,
                            );
                        }
                        if let Some(gx) = gx.as_mut() {
                            gemm(
                                rows,
                                co,
                                ci,
                                gy_block,
                                co,
                                1,
                                &wv.data()[j * ci * co..],
                                1,
                                co,
                                &mut gx[in_row * ci..],
                                true,
                            );
                        }
                    }
                }
                if let Some(gx) = gx {
                    self.acc(grads, x, Tensor::new(xs, gx)?);
                }
                if let Some(gw) = gw {
                    self.acc(grads, w, Tensor::new(ws, gw)?);
                }
            }
            Op::SoftmaxXent { logits, ref targets } => {
                let lv = self.value(logits);
                let c = lv.shape()[1];
                let scale = gy.item() / lv.shape()[0] as f64;
                let mut g = Vec::with_capacity(lv.len());
                for (z, t) in lv.data().chunks_exact(c).zip(targets.data().chunks_exact(c)) {
                    let lse = log_sum_exp(z);
                    let tsum: f64 = t.iter().sum();
                    g.extend(z.iter().zip(t).map(|(&zi, &ti)| scale * ((zi - lse).exp() * tsum - ti)));
                }
                self.acc(grads, logits, Tensor::new(lv.shape(), g)?);
            }
        }
        Ok(())
    }
}

fn unary_grad(gy: &Tensor, y: &Tensor, dy: impl Fn(f64) -> f64) -> Tensor {
    let data = gy.data().iter().zip(y.data()).map(|(&g, &y)| g * dy(y)).collect();
    Tensor::new(y.shape(), data).expect("same shape as output")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Output frame range `[t0, t1)` fed by tap `j` and the source offset.
fn tap_range(t: usize, j: usize, k: usize) -> Option<(usize, usize, isize)> {
    let shift = j as isize - (k / 2) as isize;
    let t0 = (-shift).max(0) as usize;
    let t1 = (t as isize - shift).min(t as isize);
    if t1 <= t0 as isize {
        return None;
    }
    Some((t0, t1 as usize, shift))
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> (Vec<usize>, usize) {
    let mut out = Vec::new();
    let mut count = 1;
    for (i, &d) in shape.iter().enumerate() {
        if axes.contains(&i) {
            count *= d;
        } else {
            out.push(d);
        }
    }
    if out.is_empty() {
        out.push(1);
    }
    (out, count)
}

/// Calls `f(input_index, output_index)` for every element, where the output
/// index drops the reduced axes.
fn for_each_reduced(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut out_stride = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if !axes.contains(&i) {
            out_stride[i] = s;
            s *= shape[i];
        }
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let total: usize = shape.iter().product();
    let mut i = 0;
    while i < total {
        let base: usize = idx.iter().zip(&out_stride).map(|(a, b)| a * b).sum();
        for j in 0..shape[last] {
            f(i + j, base + j * out_stride[last]);
        }
        i += shape[last];
        // advance the multi-index over all but the last axis
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mean_of_constant_is_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[2, 5, 4, 3], 0.7)).unwrap();
        let m = g.mean_over(x, &[1, 2]).unwrap();
        assert_eq!(g.value(m).shape(), &[2, 3]);
        assert!(g.value(m).data().iter().all(|v| (v - 0.7).abs() < 1e-14));
        let all = g.mean_over(x, &[0, 1, 2, 3]).unwrap();
        assert!((g.value(all).item() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0)).unwrap();
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(NnError::Shape(_))));
        let c = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(matches!(g.add(a, c), Err(NnError::Shape(_))));
    }

    #[test]
    fn nan_aborts() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1000.0)).unwrap();
        // exp(1000) overflows to inf
        assert!(matches!(g.exp(x), Err(NnError::NonFinite("exp"))));
        assert!(matches!(g.constant(Tensor::scalar(f64::NAN)), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0)).unwrap();
        let p = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(c, p).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().item(), 2.0);
    }

    #[test]
    fn temporal_conv_averages_constant_signal() {
        let (b, t, v, c, k) = (1, 11, 2, 2, 5);
        let mut w = vec![0.0; k * c * c];
        for j in 0..k {
            for ch in 0..c {
                w[j * c * c + ch * c + ch] = 1.0 / k as f64;
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[b, t, v, c], 3.0)).unwrap();
        let wv = g.constant(t4(&[k, c, c], w)).unwrap();
        let y = g.temporal_conv(x, wv).unwrap();
        let out = g.value(y).data();
        for frame in k / 2..t - k / 2 {
            for i in 0..v * c {
                assert!((out[frame * v * c + i] - 3.0).abs() < 1e-12);
            }
        }
        // first frame only sees k/2 + 1 taps
        assert!((out[0] - 3.0 * 3.0 / 5.0).abs() < 1e-12);
    }

    fn t4(shape: &[usize], d: Vec<f64>) -> Tensor {
        Tensor::new(shape, d).unwrap()
    }

    #[test]
    fn softmax_xent_closed_form() {
        let mut g = Graph::new();
        let mut z = vec![0.0; 9];
        z[0] = 1.0;
        let l = g.constant(t(&[1, 9], &z)).unwrap();
        let mut tgt = vec![0.0; 9];
        tgt[0] = 1.0;
        let loss = g.softmax_cross_entropy(l, t(&[1, 9], &tgt)).unwrap();
        let expected = (std::f64::consts::E + 8.0).ln() - 1.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-14);
    }
}
