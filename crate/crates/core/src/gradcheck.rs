//! Central finite-difference gradient checking.
//!
//! A checked function records a forward pass on a fresh eval-mode [`Graph`]
//! and returns any tensor; the checker reduces it to a scalar with a fixed
//! random weighting, so every output entry contributes to the objective.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::autograd::{Graph, Var};
use crate::encoders::ModelConfig;
use crate::error::Result;
use crate::fusion::{FusionMode, FusionModel};
use crate::math::{Real, DTYPE};
use crate::nn::{
    AttentionMask, Conv1d, Embedding, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore,
    TransformerBlock,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation half-width.
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor: `rel = |a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Entries sampled per tensor; smaller tensors are checked in full.
    pub max_per_tensor: usize,
    pub seed: u64,
}

impl GradCheckConfig {
    /// Settings matched to the build's float width.
    pub fn with_tol(tol: f64) -> Self {
        if DTYPE == "f64" {
            GradCheckConfig {
                eps: 1e-3,
                tol,
                floor: 1e-6,
                max_per_tensor: 16,
                seed: 7,
            }
        } else {
            GradCheckConfig {
                eps: 5e-2,
                tol,
                floor: 1e-2,
                max_per_tensor: 16,
                seed: 7,
            }
        }
    }

    pub fn eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// Holders of a parameter store that a checked function reads from.
pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

impl HasParams for FusionModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

struct Tally {
    max_rel: f64,
    max_abs: f64,
    checked: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            max_rel: 0.0,
            max_abs: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
        // NaN must fail, so compare with `!(x <= max)`.
        if !(rel <= self.max_rel) {
            self.max_rel = rel;
        }
        if !(abs <= self.max_abs) {
            self.max_abs = abs;
        }
        self.checked += 1;
    }

    fn report(self, name: &str, tol: f64) -> GradCheckReport {
        GradCheckReport {
            name: name.into(),
            max_rel_err: self.max_rel,
            max_abs_err: self.max_abs,
            checked: self.checked,
            tol,
            passed: self.checked > 0 && self.max_rel <= tol,
        }
    }
}

fn weights_for(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b1e_c71e);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng) as Real).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn objective(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    if shape.iter().product::<usize>() == 1 {
        return Ok(out);
    }
    g.dot(out, weights_for(&shape, seed))
}

/// The objective evaluated outside the graph, in f64, so its own rounding
/// does not add to the finite-difference noise.
fn reduce(out: &Tensor, seed: u64) -> f64 {
    if out.len() == 1 {
        return out.data()[0] as f64;
    }
    let w = weights_for(out.shape(), seed);
    out.data().iter().zip(w.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn entries(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Central difference with step `h`, using the step actually representable
/// around `x0`.
fn central<E>(x0: Real, h: f64, f: &mut E) -> Result<f64>
where
    E: FnMut(Real) -> Result<f64>,
{
    let (up, down) = (x0 + h as Real, x0 - h as Real);
    let span = up as f64 - down as f64;
    Ok((f(up)? - f(down)?) / span)
}

/// Richardson combination `(4·D(h) − D(2h)) / 3` of two central
/// differences, which cancels the `h²` error term.
fn derivative<E>(x0: Real, h: f64, mut f: E) -> Result<f64>
where
    E: FnMut(Real) -> Result<f64>,
{
    let d1 = central(x0, h, &mut f)?;
    let d2 = central(x0, 2.0 * h, &mut f)?;
    Ok((4.0 * d1 - d2) / 3.0)
}

/// Checks gradients with respect to the input tensors of `f`.
pub fn grad_check_inputs<F>(name: &str, inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(reduce(g.value(out), cfg.seed))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input_with_grad(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let obj = objective(&mut g, out, cfg.seed)?;
    let analytic = g.backward_inputs(obj, &vars);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tally = Tally::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in entries(inputs[i].len(), cfg.max_per_tensor, &mut rng) {
            let x0 = inputs[i].data()[j];
            let numeric = derivative(x0, cfg.eps, |x| {
                work[i].data_mut()[j] = x;
                eval(&work)
            })?;
            work[i].data_mut()[j] = x0;
            tally.record(grad.data()[j] as f64, numeric, cfg.floor);
        }
    }
    Ok(tally.report(name, cfg.tol))
}

/// Checks gradients with respect to every trainable parameter `f` reads.
pub fn grad_check_params<H, F>(name: &str, holder: &mut H, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    H: HasParams,
    F: Fn(&mut Graph, &H) -> Result<Var>,
{
    let eval = |h: &H| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, h)?;
        Ok(reduce(g.value(out), cfg.seed))
    };

    holder.params_mut().zero_grads();
    {
        let mut g = Graph::new();
        let out = f(&mut g, holder)?;
        let obj = objective(&mut g, out, cfg.seed)?;
        let mut store = holder.params().clone();
        g.backward(obj, &mut store);
        *holder.params_mut() = store;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tally = Tally::new();
    let ids: Vec<_> = holder.params().ids().collect();
    for id in ids {
        let p = holder.params().get(id);
        if !p.trainable {
            continue;
        }
        let analytic = p.grad.clone();
        for j in entries(p.value.len(), cfg.max_per_tensor, &mut rng) {
            let x0 = holder.params().get(id).value.data()[j];
            let numeric = derivative(x0, cfg.eps, |x| {
                holder.params_mut().get_mut(id).value.data_mut()[j] = x;
                eval(holder)
            })?;
            holder.params_mut().get_mut(id).value.data_mut()[j] = x0;
            tally.record(analytic.data()[j] as f64, numeric, cfg.floor);
        }
    }
    holder.params_mut().zero_grads();
    Ok(tally.report(name, cfg.tol))
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng) as Real).collect()).expect("shape matches data")
}

/// Moves every parameter off its initial value so layer norms and biases
/// are checked away from the special points 1 and 0.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, std: f64) {
    for p in store.iter_mut() {
        let noise = random(rng, p.value.shape(), std);
        p.value.add_assign(&noise);
    }
}

/// Toy configuration used by the model checks: d = 8, T = 4, 30 mel frames.
pub fn toy_check_config(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        d_text: 8,
        text_layers: 1,
        n_heads_text: 2,
        d_speech: 8,
        speech_layers: 1,
        n_heads_speech: 2,
        fusion_heads: 2,
        max_text_len: 32,
        mel_bins: 80,
        mel_frames: 30,
        pool_factor: 5,
        init_std: 0.3,
        ..ModelConfig::toy(10, fusion)
    }
}

/// Tolerance actually applied: the stated f32 tolerance, tightened to 1e-4
/// in the widened build.
pub fn effective_tol(f32_tol: f64) -> f64 {
    if DTYPE == "f64" {
        f32_tol.min(1e-4)
    } else {
        f32_tol
    }
}

/// Every parameterized layer, the key parameter-free ops, and both full
/// fusion forwards at toy size.
pub fn suite() -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = |tol: f64| GradCheckConfig::with_tol(effective_tol(tol));

    // Linear (4,3)×(3,2): piecewise exact, so a small step is safe.
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 3, 2, &mut Init::new(1, 0.5));
        jitter(&mut store, &mut rng, 0.1);
        let x = random(&mut rng, &[4, 3], 1.0);
        let c = cfg(1e-3).eps(if DTYPE == "f64" { 1e-5 } else { 1e-3 });
        reports.push(grad_check_inputs(
            "linear/input",
            core::slice::from_ref(&x),
            |g, v| lin.forward(g, &store, v[0]),
            &c,
        )?);
        let xi = x.clone();
        reports.push(grad_check_params(
            "linear/params",
            &mut store,
            |g, s| {
                let v = g.input(xi.clone());
                lin.forward(g, s, v)
            },
            &c,
        )?);
    }

    // Speech projection at the toy widths.
    {
        let mut store = ParamStore::new();
        let proj = Linear::new(&mut store, "proj", 8, 8, &mut Init::new(2, 0.3));
        jitter(&mut store, &mut rng, 0.1);
        let x = random(&mut rng, &[6, 8], 1.0);
        let c = cfg(1e-3).eps(if DTYPE == "f64" { 1e-5 } else { 1e-3 });
        reports.push(grad_check_inputs(
            "projection/input",
            core::slice::from_ref(&x),
            |g, v| proj.forward(g, &store, v[0]),
            &c,
        )?);
        reports.push(grad_check_params(
            "projection/params",
            &mut store,
            |g, s| {
                let v = g.input(x.clone());
                proj.forward(g, s, v)
            },
            &c,
        )?);
    }

    // Layer norm.
    {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 8);
        jitter(&mut store, &mut rng, 0.3);
        let x = random(&mut rng, &[3, 8], 1.0);
        reports.push(grad_check_inputs(
            "layer_norm/input",
            core::slice::from_ref(&x),
            |g, v| ln.forward(g, &store, v[0]),
            &cfg(1e-2),
        )?);
        reports.push(grad_check_params(
            "layer_norm/params",
            &mut store,
            |g, s| {
                let v = g.input(x.clone());
                ln.forward(g, s, v)
            },
            &cfg(1e-2),
        )?);
    }

    // Embedding lookup (repeated ids accumulate).
    {
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 6, 4, &mut Init::new(3, 0.5));
        let ids = [2usize, 0, 5, 2];
        reports.push(grad_check_params(
            "embedding/params",
            &mut store,
            |g, s| emb.forward(g, s, &ids),
            &cfg(1e-2),
        )?);
    }

    // Self-attention with a padded key, and cross-attention.
    {
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut Init::new(4, 0.3))?;
        jitter(&mut store, &mut rng, 0.05);
        let x = random(&mut rng, &[4, 8], 1.0);
        let kv = random(&mut rng, &[5, 8], 1.0);
        let mask = AttentionMask::key_padding(4, &[true, true, true, false])?;
        reports.push(grad_check_inputs(
            "self_attention/input",
            core::slice::from_ref(&x),
            |g, v| mha.forward(g, &store, v[0], v[0], Some(&mask)),
            &cfg(1e-2),
        )?);
        reports.push(grad_check_inputs(
            "cross_attention/inputs",
            &[x.clone(), kv.clone()],
            |g, v| mha.forward(g, &store, v[0], v[1], None),
            &cfg(1e-2),
        )?);
        reports.push(grad_check_params(
            "attention/params",
            &mut store,
            |g, s| {
                let q = g.input(x.clone());
                let k = g.input(kv.clone());
                mha.forward(g, s, q, k, None)
            },
            &cfg(1e-2),
        )?);
    }

    // Feed-forward.
    {
        let mut store = ParamStore::new();
        let ff = FeedForward::new(&mut store, "ff", 4, &mut Init::new(5, 0.3));
        jitter(&mut store, &mut rng, 0.05);
        let x = random(&mut rng, &[3, 4], 1.0);
        reports.push(grad_check_params(
            "feed_forward/params",
            &mut store,
            |g, s| {
                let v = g.input(x.clone());
                ff.forward(g, s, v)
            },
            &cfg(1e-2),
        )?);
    }

    // Full transformer block, d = 4, T = 3.
    {
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "block", 4, 2, &mut Init::new(6, 0.3))?;
        jitter(&mut store, &mut rng, 0.05);
        let x = random(&mut rng, &[3, 4], 1.0);
        reports.push(grad_check_inputs(
            "transformer_block/input",
            core::slice::from_ref(&x),
            |g, v| block.forward(g, &store, v[0], None),
            &cfg(1e-2),
        )?);
        reports.push(grad_check_params(
            "transformer_block/params",
            &mut store,
            |g, s| {
                let v = g.input(x.clone());
                block.forward(g, s, v, None)
            },
            &cfg(1e-2),
        )?);
    }

    // Strided convolution.
    {
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "conv", 3, 4, 3, 2, 1, &mut Init::new(7, 0.3));
        jitter(&mut store, &mut rng, 0.05);
        let x = random(&mut rng, &[7, 3], 1.0);
        reports.push(grad_check_inputs(
            "conv1d/input",
            core::slice::from_ref(&x),
            |g, v| conv.forward(g, &store, v[0]),
            &cfg(1e-2),
        )?);
        reports.push(grad_check_params(
            "conv1d/params",
            &mut store,
            |g, s| {
                let v = g.input(x.clone());
                conv.forward(g, s, v)
            },
            &cfg(1e-2),
        )?);
    }

    // Cross-entropy with one untargeted row.
    {
        let logits = random(&mut rng, &[4, 5], 1.0);
        let targets = [Some(1), None, Some(4), Some(0)];
        reports.push(grad_check_inputs(
            "cross_entropy/logits",
            core::slice::from_ref(&logits),
            |g, v| g.cross_entropy(v[0], &targets, 1.0 / 3.0),
            &cfg(1e-2),
        )?);
    }

    // Mean pooling of speech frames.
    {
        let x = random(&mut rng, &[10, 3], 1.0);
        reports.push(grad_check_inputs(
            "mean_pool/input",
            core::slice::from_ref(&x),
            |g, v| g.mean_pool_rows(v[0], 5),
            &cfg(1e-3).eps(if DTYPE == "f64" { 1e-5 } else { 1e-3 }),
        )?);
    }

    for fusion in [FusionMode::Early, FusionMode::CrossAttention] {
        let mcfg = toy_check_config(fusion);
        let mut model = FusionModel::new(mcfg.clone(), 11)?;
        jitter(&mut model.store, &mut rng, 0.05);
        let mel = MelSpectrogram::new(
            mcfg.mel_bins,
            mcfg.mel_frames,
            random(&mut rng, &[mcfg.mel_bins * mcfg.mel_frames], 0.5).into_data(),
        )?;
        let ids = [3usize, 7, 2, 9];
        let valid = [true; 4];
        let name = format!("model_{}/params", fusion.as_str());
        reports.push(grad_check_params(
            &name,
            &mut model,
            |g, m| m.forward(g, &ids, &valid, Some(&mel)),
            &cfg(1e-2),
        )?);
        let name = format!("model_{}/text_only_params", fusion.as_str());
        reports.push(grad_check_params(
            &name,
            &mut model,
            |g, m| m.forward(g, &ids, &valid, None),
            &cfg(1e-2),
        )?);
    }

    Ok(reports)
}
