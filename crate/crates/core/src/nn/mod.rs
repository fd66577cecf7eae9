//! Parameters, attention masks and the transformer building blocks.

mod layers;
mod mask;
mod params;

pub use layers::{
    sinusoidal_positions, Conv1d, Embedding, FeedForward, Init, LayerNorm, Linear,
    MultiHeadAttention, TransformerBlock, LN_EPS,
};
pub use mask::AttentionMask;
pub use params::{ParamId, ParamStore, Parameter};
