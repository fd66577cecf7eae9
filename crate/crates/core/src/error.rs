use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("diacritic mark {mark:?} at char offset {offset} has no base character")]
    MarkWithoutBase { offset: usize, mark: char },
    #[error("diacritic mark {mark:?} at char offset {offset} follows non-Arabic character {base:?}")]
    MarkOnNonArabic { offset: usize, mark: char, base: char },
    #[error("unsupported mark combination on {base:?} at char offset {offset}: {reason}")]
    Normalization { offset: usize, base: char, reason: &'static str },
    #[error("label sequence length {labels} does not match base text length {chars}")]
    LabelLength { chars: usize, labels: usize },
    #[error("base text contains diacritic mark {0:?}")]
    MarkInBase(char),
    #[error("non-Arabic character {0:?} carries a diacritic label")]
    LabelOnNonArabic(char),
    #[error("diacritic class id {0} out of range")]
    BadClassId(u8),

    #[error("empty waveform")]
    EmptyWaveform,
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("unsupported sample rate {0} Hz")]
    SampleRate(u32),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("attention mask row {0} has no allowed key")]
    EmptyMaskRow(usize),
    #[error("sinusoidal positions need an even dimension, got {0}")]
    OddDimension(usize),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{frames} frames cannot be pooled by factor {factor}")]
    PoolFactor { frames: usize, factor: usize },

    #[error("no valid positions to average the loss over")]
    NoValidPositions,
    #[error("label {0} outside the class range")]
    LabelOutOfRange(u8),
    #[error("loss diverged to {0} at step {1}")]
    Divergence(f64, u64),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("empty reference")]
    EmptyReference,
    #[error("empty dataset")]
    EmptyDataset,
}
