//! 16-bit PCM WAV reading and writing.

use std::path::Path;

use harakat_core::audio::{Waveform, SAMPLE_RATE};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{AppError, Result};

/// Reads a WAV file as mono 16 kHz. Multi-channel audio is averaged down;
/// other rates are resampled linearly. Integer and float encodings are
/// accepted.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let data_err = |msg: String| AppError::Data {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = WavReader::open(path).map_err(|e| data_err(e.to_string()))?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| data_err(e.to_string()))?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| data_err(e.to_string()))?,
    };
    let ch = spec.channels.max(1) as usize;
    let mono: Vec<f32> = interleaved
        .chunks(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    let wave = Waveform::new(mono, spec.sample_rate).map_err(|e| data_err(e.to_string()))?;
    if spec.sample_rate == SAMPLE_RATE {
        Ok(wave)
    } else {
        wave.resample(SAMPLE_RATE).map_err(|e| data_err(e.to_string()))
    }
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let err = |e: hound::Error| AppError::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = WavWriter::create(path, spec).map_err(err)?;
    for &s in wave.samples() {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(err)?;
    }
    w.finalize().map_err(err)
}
