//! JSONL corpus manifests: one `{"id", "text", "audio"?, "split"?}` object
//! per line. Relative audio paths are resolved against the manifest's
//! directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use harakat_core::audio::FeatureConfig;
use harakat_core::data::Example;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::wav::read_wav;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

/// A manifest with the directory its relative paths hang off.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn audio_path(&self, record: &ManifestRecord) -> Option<PathBuf> {
        record.audio.as_ref().map(|a| self.base_dir().join(a))
    }

    /// Records tagged `split`, or all records when `split` is `None`.
    pub fn select(&self, split: Option<&str>) -> Vec<&ManifestRecord> {
        self.records
            .iter()
            .filter(|r| split.is_none() || r.split.as_deref() == split)
            .collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let body = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let err = |line: usize, msg: String| AppError::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, line) in body.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| err(n, e.to_string()))?;
        if rec.text.trim().is_empty() {
            return Err(err(n, "empty text".into()));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(err(n, format!("duplicate id {:?}", rec.id)));
        }
        records.push(rec);
    }
    harakat_core::data::check_disjoint_splits(
        records
            .iter()
            .filter_map(|r| r.split.as_deref().map(|s| (r.id.as_str(), s))),
    )?;
    Ok(Manifest {
        path: path.to_path_buf(),
        records,
    })
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&out).map_err(|e| AppError::io(path, e))
}

/// A record left out of the example set, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

/// Builds examples for `records`, computing mel features where audio is
/// present. Records whose audio cannot be decoded are skipped with a
/// warning; malformed text is an error.
pub fn load_examples(
    manifest: &Manifest,
    records: &[&ManifestRecord],
    features: &FeatureConfig,
) -> Result<(Vec<Example>, Vec<Skipped>)> {
    let mut examples = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for rec in records {
        let example = match manifest.audio_path(rec) {
            None => Example::new(rec.id.clone(), rec.text.clone(), None),
            Some(audio) => match read_wav(&audio) {
                Ok(wave) => Example::with_audio(rec.id.clone(), rec.text.clone(), &wave, features),
                Err(e) => {
                    log::warn!("skipping {}: {e}", rec.id);
                    skipped.push(Skipped {
                        id: rec.id.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            },
        };
        let example = example.map_err(|e| AppError::Data {
            path: manifest.path.clone(),
            msg: format!("record {:?}: {e}", rec.id),
        })?;
        examples.push(example);
    }
    Ok((examples, skipped))
}
