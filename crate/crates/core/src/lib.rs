//! Speech-conditioned Arabic diacritic restoration.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every algorithmic
//! piece: the diacritic label taxonomy and strip/apply conversion, the
//! log-mel front end and spectrogram augmentation, a small reverse-mode
//! tensor autograd with transformer layers, the text and speech encoders,
//! the early-fusion and cross-attention fusion models, the training loop
//! (masked cross-entropy, AdamW, modality dropout, freeze schedule) and the
//! WER/CER metrics. File formats, audio decoding and the command line live
//! in the `harakat` companion crate.

#![no_std]

extern crate alloc;

pub mod audio;
pub mod autograd;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod math;
pub mod nn;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use math::Real;
pub use tensor::Tensor;
