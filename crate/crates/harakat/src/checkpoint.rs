//! Checkpoint directories:
//!
//! * `manifest.json`: model and training configs plus the layout of every
//!   tensor in `weights.bin` and `optim.bin` (name, shape, dtype, byte
//!   offset, byte length).
//! * `weights.bin`: parameter values, concatenated little-endian floats.
//! * `optim.bin`: AdamW first moments then second moments, same layout.
//! * `state.json`: epoch and step counters, per-tensor AdamW step counts and
//!   the training RNG position.
//! * `vocab.tsv`: the character vocabulary.

use std::fs;
use std::path::{Path, PathBuf};

use harakat_core::encoders::ModelConfig;
use harakat_core::math::{Real, DTYPE};
use harakat_core::text::CharVocab;
use harakat_core::train::{Checkpoint, NamedTensor, RngState, TrainConfig};
use harakat_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::vocab::{read_vocab, write_vocab};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<TensorEntry>,
    pub optim_tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub epoch: u32,
    pub step: u64,
    pub adam_steps: Vec<u64>,
    pub rng: RngState,
}

const WIDTH: usize = std::mem::size_of::<Real>();

fn pack<'a>(tensors: impl Iterator<Item = (String, &'a Tensor)>) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::new();
    let mut bytes = Vec::new();
    for (name, t) in tensors {
        let offset = bytes.len() as u64;
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: DTYPE.into(),
            offset,
            length: bytes.len() as u64 - offset,
        });
    }
    (entries, bytes)
}

fn unpack(entries: &[TensorEntry], bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let bad = |msg: String| AppError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    entries
        .iter()
        .map(|e| {
            if e.dtype != DTYPE {
                return Err(bad(format!(
                    "tensor {} stored as {}, this build reads {}",
                    e.name, e.dtype, DTYPE
                )));
            }
            let n: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.length as usize);
            if len != n * WIDTH || start.checked_add(len).is_none_or(|end| end > bytes.len()) {
                return Err(bad(format!("tensor {} has an inconsistent byte range", e.name)));
            }
            let data = bytes[start..start + len]
                .chunks_exact(WIDTH)
                .map(|c| Real::from_le_bytes(c.try_into().expect("exact chunk")))
                .collect();
            let tensor = Tensor::new(&e.shape, data).map_err(|err| bad(err.to_string()))?;
            Ok(NamedTensor {
                name: e.name.clone(),
                tensor,
            })
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

/// Writes `ckpt` and `vocab` to `dir`, replacing any existing checkpoint
/// there. Files are written to a sibling staging directory first and moved
/// into place.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint, vocab: &CharVocab) -> Result<()> {
    let staging = staging_path(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| AppError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| AppError::io(&staging, e))?;

    let (tensors, weights) = pack(ckpt.params.iter().map(|p| (p.name.clone(), &p.tensor)));
    let moments = ckpt
        .adam_m
        .iter()
        .map(|m| (format!("m/{}", m.name), &m.tensor))
        .chain(ckpt.adam_v.iter().map(|v| (format!("v/{}", v.name), &v.tensor)));
    let (optim_tensors, optim) = pack(moments);
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        tensors,
        optim_tensors,
    };
    let state = TrainState {
        epoch: ckpt.epoch,
        step: ckpt.step,
        adam_steps: ckpt.adam_t.clone(),
        rng: ckpt.rng,
    };
    write(&staging.join("manifest.json"), pretty(&manifest).as_bytes())?;
    write(&staging.join("state.json"), pretty(&state).as_bytes())?;
    write(&staging.join("weights.bin"), &weights)?;
    write(&staging.join("optim.bin"), &optim)?;
    write_vocab(&staging.join("vocab.tsv"), vocab)?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| AppError::io(dir, e))
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let m: CheckpointManifest = read_json(&path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(AppError::Checkpoint {
            path,
            msg: format!("format version {} is not {}", m.format_version, FORMAT_VERSION),
        });
    }
    Ok(m)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Checkpoint, CharVocab)> {
    let manifest = read_checkpoint_manifest(dir)?;
    let state: TrainState = read_json(&dir.join("state.json"))?;
    let weights_path = dir.join("weights.bin");
    let params = unpack(&manifest.tensors, &read(&weights_path)?, &weights_path)?;
    let optim_path = dir.join("optim.bin");
    let moments = unpack(&manifest.optim_tensors, &read(&optim_path)?, &optim_path)?;
    let n = params.len();
    let split = |prefix: &str, part: &[NamedTensor]| -> Result<Vec<NamedTensor>> {
        part.iter()
            .map(|t| match t.name.strip_prefix(prefix) {
                Some(name) => Ok(NamedTensor {
                    name: name.to_string(),
                    tensor: t.tensor.clone(),
                }),
                None => Err(AppError::Checkpoint {
                    path: optim_path.clone(),
                    msg: format!("unexpected moment tensor {}", t.name),
                }),
            })
            .collect()
    };
    if moments.len() != 2 * n {
        return Err(AppError::Checkpoint {
            path: optim_path,
            msg: format!("{} moment tensors for {} parameters", moments.len(), n),
        });
    }
    let adam_m = split("m/", &moments[..n])?;
    let adam_v = split("v/", &moments[n..])?;
    let vocab = read_vocab(&dir.join("vocab.tsv"))?;
    if vocab.len() != manifest.model.vocab_size {
        return Err(AppError::Checkpoint {
            path: dir.to_path_buf(),
            msg: format!(
                "vocabulary has {} ids but the model expects {}",
                vocab.len(),
                manifest.model.vocab_size
            ),
        });
    }
    let ckpt = Checkpoint {
        model: manifest.model,
        train: manifest.train,
        params,
        adam_m,
        adam_v,
        adam_t: state.adam_steps,
        epoch: state.epoch,
        step: state.step,
        rng: state.rng,
    };
    Ok((ckpt, vocab))
}
