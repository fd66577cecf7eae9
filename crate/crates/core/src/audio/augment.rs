use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::math::Real;

/// Time warp plus frequency and time masking. Widths are upper bounds; each
/// mask draws its actual width uniformly from `0..=max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub n_freq_masks: usize,
    pub freq_mask_max: usize,
    pub n_time_masks: usize,
    pub time_mask_max: usize,
    pub time_warp_max: usize,
    pub seed: u64,
}

impl AugmentPolicy {
    /// No-op policy.
    pub fn identity() -> Self {
        AugmentPolicy {
            n_freq_masks: 0,
            freq_mask_max: 0,
            n_time_masks: 0,
            time_mask_max: 0,
            time_warp_max: 0,
            seed: 0,
        }
    }

    /// Two frequency masks of up to 10 bins, two time masks of up to 5% of
    /// the frames, warp of up to 5 frames.
    pub fn default_for(n_frames: usize, seed: u64) -> Self {
        AugmentPolicy {
            n_freq_masks: 2,
            freq_mask_max: 10,
            n_time_masks: 2,
            time_mask_max: n_frames / 20,
            time_warp_max: 5,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AugmentPolicy {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self, n_mels: usize, n_frames: usize) -> Result<()> {
        if self.freq_mask_max >= n_mels.max(1) && self.n_freq_masks > 0 {
            return Err(Error::Config(alloc::format!(
                "frequency mask width {} must be below {} bins",
                self.freq_mask_max,
                n_mels
            )));
        }
        if self.n_time_masks > 0 && self.time_mask_max >= n_frames.max(1) {
            return Err(Error::Config(alloc::format!(
                "time mask width {} must be below {} frames",
                self.time_mask_max,
                n_frames
            )));
        }
        if self.time_warp_max > 0 && 2 * self.time_warp_max >= n_frames {
            return Err(Error::Config(alloc::format!(
                "time warp {} too large for {} frames",
                self.time_warp_max,
                n_frames
            )));
        }
        Ok(())
    }
}

/// Returns an augmented copy. Widths that do not fit the spectrogram are
/// clamped, so a degenerate policy is a no-op rather than an error.
pub fn spec_augment(m: &MelSpectrogram, p: &AugmentPolicy) -> MelSpectrogram {
    let (n_mels, n_frames) = (m.n_mels(), m.n_frames());
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = m.clone();

    let w = p.time_warp_max;
    if w > 0 && n_frames > 2 * w + 2 {
        let center = rng.random_range(w + 1..n_frames - w - 1);
        let shift = rng.random_range(0..=2 * w as i64) - w as i64;
        if shift != 0 {
            time_warp(m, &mut out, center, (center as i64 + shift) as usize);
        }
    }

    let fill = out.mean();
    let fmax = p.freq_mask_max.min(n_mels.saturating_sub(1));
    for _ in 0..p.n_freq_masks {
        let width = rng.random_range(0..=fmax);
        let start = rng.random_range(0..=n_mels - width);
        for b in start..start + width {
            for f in 0..n_frames {
                out.values_mut()[b * n_frames + f] = fill;
            }
        }
    }
    let tmax = p.time_mask_max.min(n_frames.saturating_sub(1));
    for _ in 0..p.n_time_masks {
        let width = rng.random_range(0..=tmax);
        let start = rng.random_range(0..=n_frames - width);
        for b in 0..n_mels {
            for f in start..start + width {
                out.values_mut()[b * n_frames + f] = fill;
            }
        }
    }
    out
}

/// Piecewise-linear time map sending source frame `center` to `target`,
/// with both ends fixed; output frames are linearly interpolated.
fn time_warp(src: &MelSpectrogram, out: &mut MelSpectrogram, center: usize, target: usize) {
    let n = src.n_frames();
    let last = n - 1;
    for t in 0..n {
        let pos = if t < target {
            t as f64 * center as f64 / target as f64
        } else {
            center as f64 + (t - target) as f64 * (last - center) as f64 / (last - target) as f64
        };
        let j = (libm::floor(pos) as usize).min(last);
        let frac = (pos - j as f64) as Real;
        let k = (j + 1).min(last);
        for b in 0..src.n_mels() {
            let row = src.bin(b);
            out.values_mut()[b * n + t] = row[j] + (row[k] - row[j]) * frac;
        }
    }
}
