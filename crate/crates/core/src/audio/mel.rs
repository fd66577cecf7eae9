use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fft::Fft;
use crate::error::{Error, Result};
use crate::math::Real;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target: u32) -> Result<Waveform> {
        if target == 0 {
            return Err(Error::SampleRate(target));
        }
        if target == self.sample_rate || self.samples.is_empty() {
            return Ok(Waveform {
                samples: self.samples.clone(),
                sample_rate: target,
            });
        }
        let ratio = self.sample_rate as f64 / target as f64;
        let n_out = libm::round((self.samples.len() as f64) / ratio).max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (libm::floor(pos) as usize).min(last);
                let frac = pos - j as f64;
                let a = self.samples[j] as f64;
                let b = self.samples[(j + 1).min(last)] as f64;
                (a + (b - a) * frac) as f32
            })
            .collect();
        Ok(Waveform {
            samples,
            sample_rate: target,
        })
    }
}

/// STFT and filterbank constants. Defaults: 25 ms Hann window, 10 ms hop,
/// 80 mel bins over 0–8 kHz, 30 s of audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Output frame count; audio is padded with silence or trimmed to
    /// `n_frames · hop` samples.
    pub n_frames: usize,
    pub log_floor: f64,
    /// Values are clamped to `max - dynamic_range` in log10 units.
    pub dynamic_range: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: SAMPLE_RATE,
            n_fft: 400,
            hop: 160,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            n_frames: 3000,
            log_floor: 1e-10,
            dynamic_range: 8.0,
        }
    }
}

impl FeatureConfig {
    /// Default constants with a fixed duration of `seconds` (100 frames per second).
    pub fn with_seconds(seconds: f64) -> Self {
        let base = Self::default();
        let frames = libm::round(seconds * base.sample_rate as f64 / base.hop as f64) as usize;
        Self::with_frames(frames)
    }

    pub fn with_frames(n_frames: usize) -> Self {
        FeatureConfig {
            n_frames,
            ..Self::default()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_frames * self.hop
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Log-mel features stored bins-major: `values[bin * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    n_mels: usize,
    n_frames: usize,
    values: Vec<Real>,
}

impl MelSpectrogram {
    pub fn new(n_mels: usize, n_frames: usize, values: Vec<Real>) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Shape {
                op: "mel",
                detail: alloc::format!("{} values for {}x{}", values.len(), n_mels, n_frames),
            });
        }
        Ok(MelSpectrogram {
            n_mels,
            n_frames,
            values,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    pub fn at(&self, bin: usize, frame: usize) -> Real {
        self.values[bin * self.n_frames + frame]
    }

    pub fn bin(&self, bin: usize) -> &[Real] {
        &self.values[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    /// Frames-major copy `[n_frames, n_mels]`, the layout the speech encoder consumes.
    pub fn to_frames_major(&self) -> crate::tensor::Tensor {
        let mut data = vec![0.0; self.values.len()];
        for b in 0..self.n_mels {
            for f in 0..self.n_frames {
                data[f * self.n_mels + b] = self.values[b * self.n_frames + f];
            }
        }
        crate::tensor::Tensor::new(&[self.n_frames, self.n_mels], data).expect("shape")
    }

    pub fn mean(&self) -> Real {
        let s: f64 = self.values.iter().map(|&v| v as f64).sum();
        (s / self.values.len().max(1) as f64) as Real
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    let logstep = libm::log(6.4) / 27.0;
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + libm::log(hz / MIN_LOG_HZ) / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
    let logstep = libm::log(6.4) / 27.0;
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * libm::exp(logstep * (mel - MIN_LOG_MEL))
    } else {
        F_SP * mel
    }
}

/// Slaney-style triangular filters with area normalization, `[n_mels][n_freqs]`.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_freqs = cfg.n_freqs();
    let fft_freqs: Vec<f64> = (0..n_freqs)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let (mlo, mhi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let pts: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (pts[m], pts[m + 1], pts[m + 2]);
            let enorm = 2.0 / (hi - lo);
            fft_freqs
                .iter()
                .map(|&f| {
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

/// Log10 mel features clamped to 8 decades below the peak and scaled by
/// `(x + 4) / 4`, padded or trimmed to `cfg.n_frames`.
pub fn compute_log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    if w.samples().is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRate(w.sample_rate()));
    }
    let n = cfg.n_samples();
    let mut audio: Vec<f64> = w.samples().iter().take(n).map(|&s| s as f64).collect();
    audio.resize(n, 0.0);

    // Centered frames with reflect padding; the trailing frame is dropped.
    let half = cfg.n_fft / 2;
    let mut padded = Vec::with_capacity(n + 2 * half);
    for i in (1..=half).rev() {
        padded.push(audio[reflect(i as isize, n)]);
    }
    padded.extend_from_slice(&audio);
    for i in 0..half {
        padded.push(audio[reflect(n as isize - 2 - i as isize, n)]);
    }

    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / cfg.n_fft as f64))
        .collect();
    let filters = mel_filterbank(cfg);
    let fft = Fft::new(cfg.n_fft);

    let mut logmel = vec![0.0f64; cfg.n_mels * cfg.n_frames];
    let mut frame = vec![0.0; cfg.n_fft];
    for t in 0..cfg.n_frames {
        let start = t * cfg.hop;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = padded[start + i] * window[i];
        }
        let spec = fft.forward_real(&frame);
        let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
        for (m, filt) in filters.iter().enumerate() {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            logmel[m * cfg.n_frames + t] = libm::log10(e.max(cfg.log_floor));
        }
    }
    let max = logmel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - cfg.dynamic_range;
    let values = logmel
        .into_iter()
        .map(|v| ((v.max(floor) + 4.0) / 4.0) as Real)
        .collect();
    MelSpectrogram::new(cfg.n_mels, cfg.n_frames, values)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}
