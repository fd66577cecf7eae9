use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::math::{self, Real};
use crate::nn::{AttentionMask, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: Real = 1e-5;

/// Weight initializer: weights and embeddings ~ N(0, std), biases zero.
pub struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    pub fn new(seed: u64, std: f64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("finite std"),
        }
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.normal.sample(&mut self.rng) as Real)
            .collect();
        Tensor::new(shape, data).expect("shape product")
    }
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, init: &mut Init) -> Self {
        let w = store.add(alloc::format!("{name}.w"), init.normal(&[in_dim, out_dim]));
        let b = store.add(alloc::format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(alloc::format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(alloc::format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Token embedding table `[vocab, dim]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, init: &mut Init) -> Self {
        Embedding {
            table: store.add(alloc::format!("{name}.table"), init.normal(&[vocab, dim])),
            vocab,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.vocab,
            });
        }
        let t = g.param(store, self.table);
        g.gather_rows(t, ids)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
/// The same module serves self-attention (`q_in == kv_in`) and cross-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, n_heads: usize, init: &mut Init) -> Result<Self> {
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(Error::Config(alloc::format!(
                "{name}: dim {dim} not divisible by {n_heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &alloc::format!("{name}.q"), dim, dim, init),
            k: Linear::new(store, &alloc::format!("{name}.k"), dim, dim, init),
            v: Linear::new(store, &alloc::format!("{name}.v"), dim, dim, init),
            o: Linear::new(store, &alloc::format!("{name}.o"), dim, dim, init),
            n_heads,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: Var,
        kv_in: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        self.forward_with_weights(g, store, q_in, kv_in, mask)
            .map(|(out, _)| out)
    }

    /// Also returns each head's attention matrix `[queries, keys]`.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: Var,
        kv_in: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Vec<Var>)> {
        let dim = self.q.out_dim;
        let dh = dim / self.n_heads;
        let q = self.q.forward(g, store, q_in)?;
        let k = self.k.forward(g, store, kv_in)?;
        let v = self.v.forward(g, store, kv_in)?;
        let scale = 1.0 / math::sqrt(dh as Real);
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let p = g.softmax(scores, mask)?;
            heads.push(g.matmul(p, vh)?);
            weights.push(p);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        Ok((self.o.forward(g, store, cat)?, weights))
    }
}

/// `linear → GELU → linear` with a 4× hidden expansion.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, init: &mut Init) -> Self {
        FeedForward {
            fc1: Linear::new(store, &alloc::format!("{name}.fc1"), dim, 4 * dim, init),
            fc2: Linear::new(store, &alloc::format!("{name}.fc2"), 4 * dim, dim, init),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, store, h)
    }
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `+ FFN(LN(·))`, with
/// dropout on each residual branch in training graphs.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, n_heads: usize, init: &mut Init) -> Result<Self> {
        Ok(TransformerBlock {
            ln1: LayerNorm::new(store, &alloc::format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &alloc::format!("{name}.attn"), dim, n_heads, init)?,
            ln2: LayerNorm::new(store, &alloc::format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, &alloc::format!("{name}.ff"), dim, init),
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let a = self.attn.forward(g, store, h, h, mask)?;
        let a = g.dropout(a);
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, store, x)?;
        let f = self.ff.forward(g, store, h)?;
        let f = g.dropout(f);
        g.add(x, f)
    }
}

/// 1-D convolution over frames-major input `[T, C_in] → [T_out, C_out]`,
/// weight laid out `[kernel·C_in, C_out]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub proj: Linear,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: &mut Init,
    ) -> Self {
        Conv1d {
            proj: Linear::new(store, name, kernel * in_ch, out_ch, init),
            kernel,
            stride,
            pad,
        }
    }

    pub fn output_len(&self, t: usize) -> usize {
        (t + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = g.im2col(x, self.kernel, self.stride, self.pad)?;
        self.proj.forward(g, store, cols)
    }
}

/// Fixed sinusoidal table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::OddDimension(dim));
    }
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        for i in 0..dim / 2 {
            let freq = libm::pow(10000.0, -((2 * i) as f64) / dim as f64);
            let angle = p as f64 * freq;
            data.push(libm::sin(angle) as Real);
            data.push(libm::cos(angle) as Real);
        }
    }
    Tensor::new(&[len, dim], data)
}
