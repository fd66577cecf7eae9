//! TOML run configuration with dotted-key command-line overrides.
//!
//! ```toml
//! train_manifest = "corpus/manifest.jsonl"
//! output_dir = "runs/toy"
//! preset = "toy"
//! fusion = "cross_attention"
//!
//! [model]
//! dropout = 0.0
//!
//! [train]
//! lr = 1e-3
//! epochs_phase1 = 2
//! ```
//!
//! Relative paths in the file are resolved against the file's directory;
//! paths given as overrides are used as written.

use std::fs;
use std::path::{Path, PathBuf};

use harakat_core::audio::{AugmentPolicy, FeatureConfig};
use harakat_core::encoders::ModelConfig;
use harakat_core::fusion::FusionMode;
use harakat_core::train::{DropGranularity, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 512-wide, 6-layer encoders, 30 s audio.
    #[default]
    Full,
    /// 32-wide, 2-layer encoders, 3 s audio.
    Toy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub d_text: Option<usize>,
    pub text_layers: Option<usize>,
    pub n_heads_text: Option<usize>,
    pub d_speech: Option<usize>,
    pub speech_layers: Option<usize>,
    pub n_heads_speech: Option<usize>,
    pub fusion_heads: Option<usize>,
    pub pool_factor: Option<usize>,
    pub max_text_len: Option<usize>,
    pub mel_frames: Option<usize>,
    pub dropout: Option<f64>,
    pub init_std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs_phase1: Option<u32>,
    pub epochs_phase2: Option<u32>,
    pub speech_drop_prob: Option<f64>,
    pub drop_granularity: Option<DropGranularity>,
    /// SpecAugment with the default policy; on unless set to false.
    pub augment: Option<bool>,
    pub seed: Option<u64>,
    pub lr_decay_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    #[serde(default)]
    pub dev_manifest: Option<PathBuf>,
    /// Split tag selecting training records; all records when unset.
    #[serde(default)]
    pub train_split: Option<String>,
    #[serde(default)]
    pub dev_split: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default = "default_fusion")]
    pub fusion: FusionMode,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
}

fn default_fusion() -> FusionMode {
    FusionMode::Early
}

const PATH_KEYS: [&str; 3] = ["train_manifest", "dev_manifest", "output_dir"];

/// Splits `key=value`; the value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| AppError::Config(format!("override {s:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(AppError::Config(format!("override {s:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| AppError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads `path`, resolves its relative paths, then applies `overrides`
    /// in order. Unknown keys are rejected.
    pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table =
            toml::from_str(&body).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for key in PATH_KEYS {
            if let Some(toml::Value::String(p)) = table.get(key) {
                let resolved = base.join(p).to_string_lossy().into_owned();
                table.insert(key.to_string(), toml::Value::String(resolved));
            }
        }
        Self::from_table(table, overrides).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_table(mut table: toml::Table, overrides: &[(String, toml::Value)]) -> Result<Self> {
        for (k, v) in overrides {
            set_dotted(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| AppError::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    /// Checks that every input path exists.
    pub fn validate_paths(&self) -> Result<()> {
        for p in std::iter::once(&self.train_manifest).chain(self.dev_manifest.as_ref()) {
            if !p.is_file() {
                return Err(AppError::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Full => ModelConfig::full_scale(vocab_size, self.fusion),
            Preset::Toy => ModelConfig::toy(vocab_size, self.fusion),
        };
        let m = &self.model;
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = m.$f { c.$f = v; } )* };
        }
        apply!(
            d_text,
            text_layers,
            n_heads_text,
            d_speech,
            speech_layers,
            n_heads_speech,
            fusion_heads,
            pool_factor,
            max_text_len,
            mel_frames,
            dropout,
            init_std
        );
        c
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig::with_frames(self.model_config(2).mel_frames)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        let t = &self.train;
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = t.$f { c.$f = v; } )* };
        }
        apply!(
            batch_size,
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            epochs_phase1,
            epochs_phase2,
            speech_drop_prob,
            drop_granularity,
            seed
        );
        let frames = self.model_config(2).mel_frames;
        c.lr_decay_steps = t.lr_decay_steps;
        c.augment = match t.augment {
            Some(false) => None,
            _ => Some(AugmentPolicy::default_for(frames, 0)),
        };
        c
    }
}
