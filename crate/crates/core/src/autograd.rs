//! Reverse-mode differentiation over a recorded graph of tensor ops.
//!
//! A [`Graph`] lives for one forward/backward pass. Parameters enter as
//! leaves copied from a [`ParamStore`]; [`Graph::backward`] accumulates
//! gradients back into the store for every trainable parameter. Nodes whose
//! ancestors are all frozen or constant are skipped during the backward
//! sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{self, Real};
use crate::nn::{AttentionMask, ParamId, ParamStore};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Real),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Real>,
        rstd: Vec<Real>,
    },
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, ids: Vec<usize> },
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
    MeanPoolRows { x: Var, factor: usize },
    Dropout { x: Var, scale: Vec<Real> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<Real>, weight: Real },
    Dot { x: Var, w: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout_rate: Real,
    rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl Graph {
    /// Evaluation graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            dropout_rate: 0.0,
            rng: None,
        }
    }

    /// Training graph with inverted dropout at `rate`, masks drawn from `seed`.
    pub fn training(rate: Real, seed: u64) -> Self {
        Graph {
            dropout_rate: rate,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A leaf whose gradient can be read back with [`Graph::backward_inputs`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Parameter leaf, created once per graph and reused afterwards.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if self.param_vars.len() <= idx {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k || bv.shape().len() != 2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Adds vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(p, q)| p + q))
            .collect();
        let t = Tensor::new(xv.shape(), data)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddRow(x, b), needs))
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape(), xv.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Scale(x, s), needs)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * std_normal_cdf(v)).collect();
        let t = Tensor::new(xv.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Gelu(x), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Real) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.len() != c || bv.len() != c {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with affine {:?}", xv.shape(), gv.shape()),
            ));
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<Real>() / c as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
            let rs = 1.0 / math::sqrt(var + eps);
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Row-wise softmax; disallowed entries get probability exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if let Some(m) = mask {
            if m.queries() != r || m.keys() != c {
                return Err(shape_err(
                    "softmax",
                    format!("scores {:?} vs mask {}x{}", xv.shape(), m.queries(), m.keys()),
                ));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let allowed = |j: usize| mask.map_or(true, |m| m.allowed(i, j));
            let mut max = Real::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > max {
                    max = v;
                }
            }
            if max == Real::NEG_INFINITY {
                return Err(Error::EmptyMaskRow(i));
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) {
                    let e = math::exp(v - max);
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= sum;
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Softmax(x), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + len > c {
            return Err(shape_err(
                "slice_cols",
                format!("{}..{} of {} columns", start, start + len, c),
            ));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let t = Tensor::new(&[r, len], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(&[r, total], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > xv.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("{}..{} of {} rows", start, start + len, xv.rows()),
            ));
        }
        let t = Tensor::new(&[len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::SliceRows { x, start }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != c) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / c.max(1);
        let t = Tensor::new(&[rows, c], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Row lookup, used for embeddings and position tables.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, c) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= n {
                return Err(Error::TokenOutOfRange { id, vocab: n });
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(&[ids.len(), c], out)?;
        let needs = self.needs(table);
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Unfolds `[T, C]` into `[T_out, kernel·C]` patches with zero padding,
    /// so that a 1-D convolution becomes a matrix product.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        if t + 2 * pad < kernel || stride == 0 {
            return Err(shape_err(
                "im2col",
                format!("{} frames, kernel {}, stride {}", t, kernel, stride),
            ));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = vec![0.0; t_out * kernel * c];
        for o in 0..t_out {
            for j in 0..kernel {
                let src = (o * stride + j) as isize - pad as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let dst = o * kernel * c + j * c;
                out[dst..dst + c].copy_from_slice(xv.row(src as usize));
            }
        }
        let tt = Tensor::new(&[t_out, kernel * c], out)?;
        let needs = self.needs(x);
        Ok(self.push(
            tt,
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Averages each block of `factor` consecutive rows.
    pub fn mean_pool_rows(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        if factor == 0 || t % factor != 0 {
            return Err(Error::PoolFactor { frames: t, factor });
        }
        let n = t / factor;
        let mut out = vec![0.0; n * c];
        for k in 0..n {
            let dst = &mut out[k * c..(k + 1) * c];
            for r in k * factor..(k + 1) * factor {
                for (d, v) in dst.iter_mut().zip(xv.row(r)) {
                    *d += *v;
                }
            }
            for d in dst.iter_mut() {
                *d /= factor as Real;
            }
        }
        let tt = Tensor::new(&[n, c], out)?;
        let needs = self.needs(x);
        Ok(self.push(tt, Op::MeanPoolRows { x, factor }, needs))
    }

    /// Inverted dropout in training graphs, identity otherwise.
    pub fn dropout(&mut self, x: Var) -> Var {
        let rate = self.dropout_rate;
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].value.len();
        let scale: Vec<Real> = (0..n)
            .map(|_| if rng.random::<f64>() < rate as f64 { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let t = Tensor::new(xv.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Dropout { x, scale }, needs)
    }

    /// `weight · Σ −log softmax(logits[i])[target_i]` over rows with a target.
    /// Rows without a target contribute nothing to the value or the gradient.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        weight: Real,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), r),
            ));
        }
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(Error::LabelOutOfRange(t as u8));
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let sum: Real = row.iter().map(|v| math::exp(v - max)).sum();
            let lse = max + math::ln(sum);
            total += lse - row[t];
            for j in 0..c {
                probs[i * c + j] = math::exp(row[j] - lse);
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total * weight),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                weight,
            },
            needs,
        ))
    }

    /// `Σ x ⊙ w` as a scalar; used to reduce tensors for gradient checks.
    pub fn dot(&mut self, x: Var, w: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != w.len() {
            return Err(shape_err(
                "dot",
                format!("{:?} · {:?}", xv.shape(), w.shape()),
            ));
        }
        let s: f64 = xv
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s as Real), Op::Dot { x, w }, needs))
    }

    fn sweep(&self, root: Var) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    /// Back-propagates from scalar `root`, adding into the store's gradients.
    pub fn backward(&self, root: Var, store: &mut ParamStore) {
        let grads = self.sweep(root);
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(&g);
                }
            }
        }
    }

    /// Gradients of `root` with respect to the given leaves.
    pub fn backward_inputs(&self, root: Var, inputs: &[Var]) -> Vec<Tensor> {
        let mut grads = self.sweep(root);
        inputs
            .iter()
            .map(|v| {
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
            })
            .collect()
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let ga = acc(grads, *a, av.shape());
                    matmul_nt_acc(g.data(), bv.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    matmul_tn_acc(av.data(), g.data(), gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.needs(*a) {
                    let ga = acc(grads, *a, av.shape());
                    matmul_acc(g.data(), bv.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    matmul_tn_acc(g.data(), av.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(acc(grads, v, out.shape()), g.data());
                    }
                }
            }
            Op::AddRow(x, b) => {
                if self.needs(*x) {
                    add_into(acc(grads, *x, out.shape()), g.data());
                }
                if self.needs(*b) {
                    let bshape = self.value(*b).shape().to_vec();
                    let gb = acc(grads, *b, &bshape);
                    for row in g.data().chunks(gb.len()) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                let gx = acc(grads, *x, out.shape());
                for (d, v) in gx.iter_mut().zip(g.data()) {
                    *d += v * s;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let gx = acc(grads, *x, out.shape());
                for ((d, v), &xi) in gx.iter_mut().zip(g.data()).zip(xv.data()) {
                    let pdf = math::exp(-0.5 * xi * xi) * FRAC_1_SQRT_2PI;
                    *d += v * (std_normal_cdf(xi) + xi * pdf);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = out.cols();
                if self.needs(*gamma) {
                    let gg = acc(grads, *gamma, &[c]);
                    for (row_g, row_h) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += row_g[j] * row_h[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = acc(grads, *beta, &[c]);
                    for row_g in g.data().chunks(c) {
                        add_into(gb, row_g);
                    }
                }
                if self.needs(*x) {
                    let gamma_v = self.value(*gamma).data().to_vec();
                    let gx = acc(grads, *x, out.shape());
                    let mut dxhat = vec![0.0; c];
                    for (i, rs) in rstd.iter().enumerate() {
                        let row_g = &g.data()[i * c..(i + 1) * c];
                        let row_h = &xhat[i * c..(i + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            dxhat[j] = row_g[j] * gamma_v[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * row_h[j];
                        }
                        mean_d /= c as Real;
                        mean_dh /= c as Real;
                        for j in 0..c {
                            gx[i * c + j] += rs * (dxhat[j] - mean_d - row_h[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let c = out.cols();
                let gx = acc(grads, *x, out.shape());
                for (i, (row_y, row_g)) in out.data().chunks(c).zip(g.data().chunks(c)).enumerate()
                {
                    let dot: Real = row_y.iter().zip(row_g).map(|(y, d)| y * d).sum();
                    for j in 0..c {
                        gx[i * c + j] += row_y[j] * (row_g[j] - dot);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let xshape = self.value(*x).shape().to_vec();
                let xc = xshape[xshape.len() - 1];
                let len = out.cols();
                let gx = acc(grads, *x, &xshape);
                for (i, row) in g.data().chunks(len).enumerate() {
                    add_into(&mut gx[i * xc + start..i * xc + start + len], row);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let pshape = self.value(p).shape().to_vec();
                    let pc = self.value(p).cols();
                    if self.needs(p) {
                        let gp = acc(grads, p, &pshape);
                        for (i, row) in g.data().chunks(total).enumerate() {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &row[off..off + pc]);
                        }
                    }
                    off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let xshape = self.value(*x).shape().to_vec();
                let c = out.cols();
                let gx = acc(grads, *x, &xshape);
                add_into(&mut gx[start * c..start * c + g.len()], g.data());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pshape = self.value(p).shape().to_vec();
                    let n = self.value(p).len();
                    if self.needs(p) {
                        add_into(acc(grads, p, &pshape), &g.data()[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::GatherRows { table, ids } => {
                let tshape = self.value(*table).shape().to_vec();
                let c = out.cols();
                let gt = acc(grads, *table, &tshape);
                for (k, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * c..(id + 1) * c], &g.data()[k * c..(k + 1) * c]);
                }
            }
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            } => {
                let xv = self.value(*x);
                let (t, c) = (xv.rows(), xv.cols());
                let xshape = xv.shape().to_vec();
                let gx = acc(grads, *x, &xshape);
                let width = kernel * c;
                for o in 0..out.rows() {
                    for j in 0..*kernel {
                        let src = (o * stride + j) as isize - *pad as isize;
                        if src < 0 || src as usize >= t {
                            continue;
                        }
                        let s = src as usize;
                        add_into(
                            &mut gx[s * c..(s + 1) * c],
                            &g.data()[o * width + j * c..o * width + (j + 1) * c],
                        );
                    }
                }
            }
            Op::MeanPoolRows { x, factor } => {
                let xshape = self.value(*x).shape().to_vec();
                let c = out.cols();
                let gx = acc(grads, *x, &xshape);
                let inv = 1.0 / *factor as Real;
                for (r, row) in gx.chunks_mut(c).enumerate() {
                    let k = r / factor;
                    for (d, v) in row.iter_mut().zip(&g.data()[k * c..(k + 1) * c]) {
                        *d += v * inv;
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let gx = acc(grads, *x, out.shape());
                for ((d, v), s) in gx.iter_mut().zip(g.data()).zip(scale) {
                    *d += v * s;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                weight,
            } => {
                let lshape = self.value(*logits).shape().to_vec();
                let c = lshape[lshape.len() - 1];
                let scale = g.data()[0] * weight;
                let gl = acc(grads, *logits, &lshape);
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                    }
                }
            }
            Op::Dot { x, w } => {
                let s = g.data()[0];
                let gx = acc(grads, *x, out_shape_of(self, *x));
                for (d, wv) in gx.iter_mut().zip(w.data()) {
                    *d += s * wv;
                }
            }
        }
    }
}

fn out_shape_of(g: &Graph, v: Var) -> &[usize] {
    g.value(v).shape()
}

const FRAC_1_SQRT_2PI: Real = 0.398_942_280_401_432_7;

#[inline]
fn std_normal_cdf(x: Real) -> Real {
    0.5 * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2 as Real))
}

fn acc<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [Real] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

#[inline]
fn add_into(dst: &mut [Real], src: &[Real]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}
