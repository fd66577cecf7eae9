//! The two fusion strategies and the per-character classification head.
//!
//! * Early fusion: speech encoder frames are mean-pooled by `pool_factor`,
//!   projected to the text width and prepended to the character embeddings
//!   as a soft prompt; the combined sequence runs through the text encoder
//!   and only text positions are classified.
//! * Cross-attention fusion: text and speech are encoded separately, the
//!   projected (unpooled) speech states are attended to by the text states
//!   in one residual cross-attention block, then classified.
//!
//! Both accept a missing spectrogram: early fusion runs the text alone and
//! cross-attention fusion skips the fusion block.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::autograd::{Graph, Var};
use crate::encoders::{ModelConfig, SpeechEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, MultiHeadAttention, ParamStore};
use crate::tensor::Tensor;
use crate::text::DiacriticLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Early,
    CrossAttention,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Early => "early",
            FusionMode::CrossAttention => "cross_attention",
        }
    }
}

impl core::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(FusionMode::Early),
            "cross_attention" | "cross" => Ok(FusionMode::CrossAttention),
            other => Err(Error::Config(alloc::format!("unknown fusion mode {other:?}"))),
        }
    }
}

/// Mean of each window of `pool_factor` consecutive rows.
pub fn downsample_speech(frames: &Tensor, pool_factor: usize) -> Result<Tensor> {
    let (f, d) = (frames.rows(), frames.cols());
    if pool_factor == 0 || f % pool_factor != 0 {
        return Err(Error::PoolFactor {
            frames: f,
            factor: pool_factor,
        });
    }
    let mut out = vec![0.0; (f / pool_factor) * d];
    for (k, dst) in out.chunks_mut(d).enumerate() {
        for r in k * pool_factor..(k + 1) * pool_factor {
            for (o, v) in dst.iter_mut().zip(frames.row(r)) {
                *o += *v;
            }
        }
        for o in dst.iter_mut() {
            *o /= pool_factor as crate::Real;
        }
    }
    Tensor::new(&[f / pool_factor, d], out)
}

/// Position index of every row of the early-fusion sequence: `S` speech
/// tokens take 0..S and text character `i` takes `S + i`.
pub fn early_position_map(speech_tokens: usize, text_len: usize) -> Vec<usize> {
    (0..speech_tokens + text_len).collect()
}

/// Both encoders, the speech projection, the optional cross-attention block
/// and the classification head, with their parameters.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub text: TextEncoder,
    pub speech: SpeechEncoder,
    pub proj: Linear,
    pub cross: Option<MultiHeadAttention>,
    pub head: Linear,
}

impl FusionModel {
    pub const PROJ_PREFIX: &'static str = "proj.";

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed, config.init_std);
        let text = TextEncoder::new(&mut store, &config, &mut init)?;
        let speech = SpeechEncoder::new(&mut store, &config, &mut init)?;
        let proj = Linear::new(&mut store, "proj", config.d_speech, config.d_text, &mut init);
        let cross = match config.fusion {
            FusionMode::CrossAttention => Some(MultiHeadAttention::new(
                &mut store,
                "cross.attn",
                config.d_text,
                config.fusion_heads,
                &mut init,
            )?),
            FusionMode::Early => None,
        };
        let head = Linear::new(&mut store, "head", config.d_text, config.n_classes, &mut init);
        Ok(FusionModel {
            config,
            store,
            text,
            speech,
            proj,
            cross,
            head,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.config.fusion
    }

    /// Freezes or unfreezes every speech-encoder parameter.
    pub fn set_speech_trainable(&mut self, trainable: bool) {
        self.store.set_trainable(SpeechEncoder::PREFIX, trainable);
    }

    /// Logits `[T, n_classes]` in the model's fusion mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        token_ids: &[usize],
        valid: &[bool],
        mel: Option<&MelSpectrogram>,
    ) -> Result<Var> {
        match self.config.fusion {
            FusionMode::Early => self.forward_early(g, token_ids, valid, mel),
            FusionMode::CrossAttention => self.forward_cross(g, token_ids, valid, mel),
        }
    }

    /// Speech encoder output projected to the text width, optionally pooled.
    pub fn speech_states(&self, g: &mut Graph, mel: &MelSpectrogram, pool: bool) -> Result<Var> {
        let frames = self.speech.encode(g, &self.store, mel)?.frames;
        let frames = if pool {
            g.mean_pool_rows(frames, self.config.pool_factor)?
        } else {
            frames
        };
        self.proj.forward(g, &self.store, frames)
    }

    pub fn forward_early(
        &self,
        g: &mut Graph,
        token_ids: &[usize],
        valid: &[bool],
        mel: Option<&MelSpectrogram>,
    ) -> Result<Var> {
        check_lengths(token_ids, valid)?;
        let chars = self.text.embed(g, &self.store, token_ids)?;
        let t = token_ids.len();
        let (seq, s) = match mel {
            Some(mel) => {
                let speech = self.speech_states(g, mel, true)?;
                let s = g.value(speech).rows();
                (g.concat_rows(&[speech, chars])?, s)
            }
            None => (chars, 0),
        };
        let mut seq_valid = vec![true; s];
        seq_valid.extend_from_slice(valid);
        let positions = early_position_map(s, t);
        let states = self
            .text
            .contextualize(g, &self.store, seq, &positions, &seq_valid)?;
        let text_states = if s > 0 { g.slice_rows(states, s, t)? } else { states };
        self.head.forward(g, &self.store, text_states)
    }

    pub fn forward_cross(
        &self,
        g: &mut Graph,
        token_ids: &[usize],
        valid: &[bool],
        mel: Option<&MelSpectrogram>,
    ) -> Result<Var> {
        let text = self.text.encode(g, &self.store, token_ids, valid)?.states;
        let fused = match (mel, &self.cross) {
            (Some(mel), Some(cross)) => {
                let speech = self.speech_states(g, mel, false)?;
                let attn = cross.forward(g, &self.store, text, speech, None)?;
                let attn = g.dropout(attn);
                g.add(text, attn)?
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "cross-attention forward on a model built without a fusion block".into(),
                ))
            }
            (None, _) => text,
        };
        self.head.forward(g, &self.store, fused)
    }

    /// Eval-mode logits.
    pub fn logits(&self, token_ids: &[usize], valid: &[bool], mel: Option<&MelSpectrogram>) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, token_ids, valid, mel)?;
        Ok(g.value(out).clone())
    }

    /// Greedy per-character decoding.
    pub fn predict(&self, token_ids: &[usize], mel: Option<&MelSpectrogram>) -> Result<Vec<DiacriticLabel>> {
        let valid = vec![true; token_ids.len()];
        let logits = self.logits(token_ids, &valid, mel)?;
        Ok((0..logits.rows()).map(|r| argmax_label(logits.row(r))).collect())
    }
}

pub fn argmax_label(row: &[crate::Real]) -> DiacriticLabel {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    DiacriticLabel::new(best as u8).expect("row has n_classes entries")
}

fn check_lengths(ids: &[usize], valid: &[bool]) -> Result<()> {
    if ids.len() != valid.len() {
        return Err(Error::Shape {
            op: "fusion",
            detail: alloc::format!("{} ids, {} mask flags", ids.len(), valid.len()),
        });
    }
    Ok(())
}
