//! Character-level text encoder and convolution-fronted speech encoder.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::nn::{
    sinusoidal_positions, AttentionMask, Conv1d, Embedding, Init, LayerNorm, ParamStore,
    TransformerBlock,
};
use crate::text::DiacriticLabel;

/// Every dimensional hyperparameter of a model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub fusion: FusionMode,
    pub vocab_size: usize,
    pub d_text: usize,
    pub text_layers: usize,
    pub n_heads_text: usize,
    pub d_speech: usize,
    pub speech_layers: usize,
    pub n_heads_speech: usize,
    /// Heads of the single cross-attention block (cross-attention mode only).
    pub fusion_heads: usize,
    pub n_classes: usize,
    /// Encoder frames averaged into one speech token in early fusion.
    pub pool_factor: usize,
    pub max_text_len: usize,
    pub mel_bins: usize,
    pub mel_frames: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl ModelConfig {
    /// 512-wide, six-layer encoders on both sides, 30 s of audio.
    pub fn full_scale(vocab_size: usize, fusion: FusionMode) -> Self {
        ModelConfig {
            fusion,
            vocab_size,
            d_text: 512,
            text_layers: 6,
            n_heads_text: 8,
            d_speech: 512,
            speech_layers: 6,
            n_heads_speech: 8,
            fusion_heads: 8,
            n_classes: DiacriticLabel::COUNT,
            pool_factor: 10,
            max_text_len: 512,
            mel_bins: 80,
            mel_frames: 3000,
            dropout: 0.1,
            init_std: 0.02,
        }
    }

    /// 32-wide, two layers per encoder, 3 s of audio.
    pub fn toy(vocab_size: usize, fusion: FusionMode) -> Self {
        ModelConfig {
            d_text: 32,
            text_layers: 2,
            n_heads_text: 2,
            d_speech: 32,
            speech_layers: 2,
            n_heads_speech: 2,
            fusion_heads: 2,
            max_text_len: 64,
            mel_frames: 300,
            ..Self::full_scale(vocab_size, fusion)
        }
    }

    /// Speech encoder output length.
    pub fn speech_frames(&self) -> usize {
        self.mel_frames / 2
    }

    /// Speech tokens prepended in early fusion.
    pub fn speech_tokens(&self) -> usize {
        self.speech_frames() / self.pool_factor
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} leaves no room for characters", self.vocab_size));
        }
        if self.n_heads_text == 0 || self.d_text % self.n_heads_text != 0 {
            return fail(format!("d_text {} not divisible by {} heads", self.d_text, self.n_heads_text));
        }
        if self.n_heads_speech == 0 || self.d_speech % self.n_heads_speech != 0 {
            return fail(format!(
                "d_speech {} not divisible by {} heads",
                self.d_speech, self.n_heads_speech
            ));
        }
        if self.fusion == FusionMode::CrossAttention
            && (self.fusion_heads == 0 || self.d_text % self.fusion_heads != 0)
        {
            return fail(format!("d_text {} not divisible by {} fusion heads", self.d_text, self.fusion_heads));
        }
        if self.d_text % 2 != 0 || self.d_speech % 2 != 0 {
            return fail("model dimensions must be even for sinusoidal positions".into());
        }
        if self.n_classes != DiacriticLabel::COUNT {
            return fail(format!("n_classes must be {}", DiacriticLabel::COUNT));
        }
        if self.mel_frames < 2 || self.mel_frames % 2 != 0 {
            return fail(format!("mel_frames {} must be even", self.mel_frames));
        }
        if self.pool_factor == 0 || self.speech_frames() % self.pool_factor != 0 {
            return fail(format!(
                "{} speech frames not divisible by pool factor {}",
                self.speech_frames(),
                self.pool_factor
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_text_len == 0 {
            return fail("max_text_len must be positive".into());
        }
        Ok(())
    }
}

/// Text encoder output: states `[T, d_text]` plus per-position validity.
pub struct TextEncoding {
    pub states: Var,
    pub mask: Vec<bool>,
}

/// Speech encoder output `[mel_frames / 2, d_speech]`.
pub struct SpeechEncoding {
    pub frames: Var,
}

/// Character embedding, sinusoidal positions, pre-norm transformer stack and
/// a final layer norm.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: Embedding,
    pub blocks: Vec<TransformerBlock>,
    pub ln_final: LayerNorm,
    pub dim: usize,
    pub max_len: usize,
}

impl TextEncoder {
    pub const PREFIX: &'static str = "text.";

    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, init: &mut Init) -> Result<Self> {
        let blocks = (0..cfg.text_layers)
            .map(|i| TransformerBlock::new(store, &format!("text.block{i}"), cfg.d_text, cfg.n_heads_text, init))
            .collect::<Result<_>>()?;
        Ok(TextEncoder {
            embed: Embedding::new(store, "text.embed", cfg.vocab_size, cfg.d_text, init),
            blocks,
            ln_final: LayerNorm::new(store, "text.ln_final", cfg.d_text),
            dim: cfg.d_text,
            max_len: cfg.max_text_len,
        })
    }

    pub fn embed(&self, g: &mut Graph, store: &ParamStore, token_ids: &[usize]) -> Result<Var> {
        if token_ids.len() > self.max_len {
            return Err(Error::Config(format!(
                "text length {} exceeds max_text_len {}",
                token_ids.len(),
                self.max_len
            )));
        }
        self.embed.forward(g, store, token_ids)
    }

    /// Adds the position rows named by `positions` to `x`, then runs the
    /// stack with keys restricted to `valid` positions.
    pub fn contextualize(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        positions: &[usize],
        valid: &[bool],
    ) -> Result<Var> {
        let max_pos = positions.iter().copied().max().map_or(0, |m| m + 1);
        let table = g.input(sinusoidal_positions(max_pos, self.dim)?);
        let pos = g.gather_rows(table, positions)?;
        let mut h = g.add(x, pos)?;
        h = g.dropout(h);
        let mask = AttentionMask::key_padding(valid.len(), valid)?;
        for block in &self.blocks {
            h = block.forward(g, store, h, Some(&mask))?;
        }
        self.ln_final.forward(g, store, h)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        token_ids: &[usize],
        valid: &[bool],
    ) -> Result<TextEncoding> {
        if token_ids.len() != valid.len() {
            return Err(Error::Shape {
                op: "encode_text",
                detail: format!("{} ids, {} mask flags", token_ids.len(), valid.len()),
            });
        }
        let x = self.embed(g, store, token_ids)?;
        let positions: Vec<usize> = (0..token_ids.len()).collect();
        let states = self.contextualize(g, store, x, &positions, valid)?;
        Ok(TextEncoding {
            states,
            mask: valid.to_vec(),
        })
    }
}

/// Two GELU convolutions (the second with stride 2), sinusoidal positions,
/// a pre-norm transformer stack and a final layer norm. No padding mask:
/// the padded silence is part of the input.
#[derive(Debug, Clone)]
pub struct SpeechEncoder {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub blocks: Vec<TransformerBlock>,
    pub ln_post: LayerNorm,
    pub dim: usize,
    pub mel_bins: usize,
    pub mel_frames: usize,
}

impl SpeechEncoder {
    pub const PREFIX: &'static str = "speech.";

    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, init: &mut Init) -> Result<Self> {
        let conv1 = Conv1d::new(store, "speech.conv1", cfg.mel_bins, cfg.d_speech, 3, 1, 1, init);
        let conv2 = Conv1d::new(store, "speech.conv2", cfg.d_speech, cfg.d_speech, 3, 2, 1, init);
        let blocks = (0..cfg.speech_layers)
            .map(|i| {
                TransformerBlock::new(store, &format!("speech.block{i}"), cfg.d_speech, cfg.n_heads_speech, init)
            })
            .collect::<Result<_>>()?;
        Ok(SpeechEncoder {
            conv1,
            conv2,
            blocks,
            ln_post: LayerNorm::new(store, "speech.ln_post", cfg.d_speech),
            dim: cfg.d_speech,
            mel_bins: cfg.mel_bins,
            mel_frames: cfg.mel_frames,
        })
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, mel: &MelSpectrogram) -> Result<SpeechEncoding> {
        if mel.n_mels() != self.mel_bins || mel.n_frames() != self.mel_frames {
            return Err(Error::Shape {
                op: "encode_speech",
                detail: format!(
                    "mel ({}, {}) but model expects ({}, {})",
                    mel.n_mels(),
                    mel.n_frames(),
                    self.mel_bins,
                    self.mel_frames
                ),
            });
        }
        let x = g.input(mel.to_frames_major());
        let h = self.conv1.forward(g, store, x)?;
        let h = g.gelu(h);
        let h = self.conv2.forward(g, store, h)?;
        let h = g.gelu(h);
        let n = g.value(h).rows();
        let pos = g.input(sinusoidal_positions(n, self.dim)?);
        let mut h = g.add(h, pos)?;
        h = g.dropout(h);
        for block in &self.blocks {
            h = block.forward(g, store, h, None)?;
        }
        let frames = self.ln_post.forward(g, store, h)?;
        Ok(SpeechEncoding { frames })
    }
}
