#![allow(dead_code)]

use harakat_core::audio::FeatureConfig;
use harakat_core::data::{build_vocab, synth_examples, synth_toy_corpus, Example, SynthConfig};
use harakat_core::encoders::ModelConfig;
use harakat_core::fusion::{FusionMode, FusionModel};
use harakat_core::text::CharVocab;
use harakat_core::train::{TrainConfig, Trainer};

/// Synthetic tone corpus at the toy spectrogram length.
pub fn toy_corpus(n: usize, seed: u64) -> (Vec<Example>, CharVocab) {
    let records = synth_toy_corpus(n, seed, &SynthConfig::default());
    let examples = synth_examples(&records, &FeatureConfig::with_frames(300)).unwrap();
    let vocab = build_vocab(&examples);
    (examples, vocab)
}

pub fn toy_model(vocab: &CharVocab, fusion: FusionMode, dropout: f64) -> ModelConfig {
    ModelConfig { dropout, ..ModelConfig::toy(vocab.len(), fusion) }
}

/// Small enough for per-example loops in tests: d = 16, one layer each,
/// 40 mel frames pooled by 4 into 5 speech tokens.
pub fn tiny_model(vocab_size: usize, fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        d_text: 16,
        text_layers: 1,
        d_speech: 16,
        speech_layers: 1,
        mel_frames: 40,
        pool_factor: 4,
        init_std: 0.2,
        ..ModelConfig::toy(vocab_size, fusion)
    }
}

/// Memorization settings: no regularization, speech always present,
/// both encoders trainable from the first step. The learning rate decays
/// linearly to zero over `epochs` steps (one batch per epoch on 16 sentences).
pub fn overfit_train(seed: u64, epochs: u32) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        lr: 3e-3,
        lr_decay_steps: Some(epochs as u64),
        weight_decay: 0.0,
        epochs_phase1: 0,
        epochs_phase2: epochs,
        speech_drop_prob: 0.0,
        augment: None,
        seed,
        ..TrainConfig::default()
    }
}

pub fn trainer(model: ModelConfig, train: TrainConfig, seed: u64) -> Trainer {
    Trainer::new(FusionModel::new(model, seed).unwrap(), train).unwrap()
}
