//! Waveform to log-mel features, plus training-time spectrogram augmentation.

mod augment;
mod fft;
mod mel;

pub use augment::{spec_augment, AugmentPolicy};
pub use fft::{Complex, Fft};
pub use mel::{
    compute_log_mel, hz_to_mel, mel_filterbank, mel_to_hz, FeatureConfig, MelSpectrogram, Waveform,
    SAMPLE_RATE,
};
