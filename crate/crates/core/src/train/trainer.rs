use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{check_layout, load_params, named};
use super::{adamw_step, batch_loss, AdamWConfig, Checkpoint, NamedTensor, OptimizerState, RngState};
use crate::audio::{spec_augment, AugmentPolicy, MelSpectrogram};
use crate::autograd::Graph;
use crate::data::{make_batches, Batch, Example};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMode};
use crate::fusion::FusionModel;
use crate::math::Real;
use crate::text::CharVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropGranularity {
    PerBatch,
    PerExample,
}

/// Training hyperparameters. Defaults: batch 32, constant lr 1e-5, AdamW
/// (0.9, 0.999, 1e-8, wd 0.01), 5 frozen-speech epochs then 5 joint epochs,
/// speech dropped for a whole batch with probability 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs_phase1: u32,
    pub epochs_phase2: u32,
    pub speech_drop_prob: f64,
    pub drop_granularity: DropGranularity,
    /// Applied to every surviving spectrogram; the seed is redrawn per example.
    pub augment: Option<AugmentPolicy>,
    pub seed: u64,
    /// When set, the learning rate falls linearly from `lr` at step 0 to
    /// zero at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs_phase1: 5,
            epochs_phase2: 5,
            speech_drop_prob: 0.5,
            drop_granularity: DropGranularity::PerBatch,
            augment: Some(AugmentPolicy::default_for(3000, 0)),
            seed: 0,
            lr_decay_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate for the update that follows `step` completed updates.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_decay_steps {
            Some(n) => self.lr * (1.0 - step as f64 / n as f64).max(0.0),
            None => self.lr,
        }
    }

    pub fn total_epochs(&self) -> u32 {
        self.epochs_phase1 + self.epochs_phase2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad("lr and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.speech_drop_prob) {
            return bad("speech_drop_prob must lie in [0, 1]");
        }
        if self.lr_decay_steps == Some(0) {
            return bad("lr_decay_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Speech encoder frozen; projection and text side train.
    SpeechFrozen,
    Joint,
}

/// Randomly withholds speech so the model learns to work without it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityDropout {
    pub prob: f64,
    pub granularity: DropGranularity,
}

impl ModalityDropout {
    /// Per-example keep flags for a batch of `n`. One coin is drawn per
    /// batch (or per example), whether or not any speech is present.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<bool> {
        match self.granularity {
            DropGranularity::PerBatch => {
                let keep = !rng.random_bool(self.prob);
                vec![keep; n]
            }
            DropGranularity::PerExample => (0..n).map(|_| !rng.random_bool(self.prob)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: Real,
    /// Examples that had speech but trained text-only this step.
    pub speech_dropped: usize,
    pub speech_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub phase: Phase,
    pub steps: usize,
    pub mean_loss: f64,
    pub batches_speech_dropped: usize,
    pub dev_wer: Option<f64>,
    pub dev_cer: Option<f64>,
}

/// Hook for per-epoch side effects such as writing checkpoints.
pub trait TrainObserver {
    type Error;
    fn on_epoch_end(&mut self, trainer: &Trainer, summary: &EpochSummary) -> core::result::Result<(), Self::Error>;
}

impl TrainObserver for () {
    type Error = core::convert::Infallible;
    fn on_epoch_end(&mut self, _: &Trainer, _: &EpochSummary) -> core::result::Result<(), Self::Error> {
        Ok(())
    }
}

#[derive(Debug)]
pub enum FitError<E> {
    Train(Error),
    Observer(E),
}

impl<E> From<Error> for FitError<E> {
    fn from(e: Error) -> Self {
        FitError::Train(e)
    }
}

pub struct Trainer {
    pub model: FusionModel,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    epoch: u32,
    step: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: FusionModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model.store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e5f_726e);
        let mut t = Trainer {
            model,
            optimizer,
            config,
            epoch: 0,
            step: 0,
            rng,
        };
        t.enter_phase();
        Ok(t)
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn phase(&self) -> Phase {
        self.phase_of(self.epoch)
    }

    pub fn phase_of(&self, epoch: u32) -> Phase {
        if epoch < self.config.epochs_phase1 {
            Phase::SpeechFrozen
        } else {
            Phase::Joint
        }
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    fn enter_phase(&mut self) {
        let trainable = self.phase() == Phase::Joint;
        self.model.set_speech_trainable(trainable);
    }

    pub fn modality_dropout(&self) -> ModalityDropout {
        ModalityDropout {
            prob: self.config.speech_drop_prob,
            granularity: self.config.drop_granularity,
        }
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let keep = self.modality_dropout().draw(batch.len(), &mut self.rng);
        let mut augmented: Vec<Option<MelSpectrogram>> = Vec::with_capacity(batch.len());
        let mut speech_dropped = 0;
        for (i, mel) in batch.mels.iter().enumerate() {
            let mel = match mel {
                Some(m) if batch.speech_present[i] => m,
                _ => {
                    augmented.push(None);
                    continue;
                }
            };
            if !keep[i] {
                speech_dropped += 1;
                augmented.push(None);
                continue;
            }
            augmented.push(Some(match &self.config.augment {
                Some(policy) => spec_augment(mel, &policy.with_seed(self.rng.next_u64())),
                None => mel.clone(),
            }));
        }
        let mels: Vec<Option<&MelSpectrogram>> = augmented.iter().map(Option::as_ref).collect();
        let speech_used = mels.iter().filter(|m| m.is_some()).count();

        let mut g = Graph::training(self.model.config.dropout as Real, self.rng.next_u64());
        let loss = batch_loss(&mut g, &self.model, batch, &mels)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence(value as f64, self.step));
        }
        g.backward(loss, &mut self.model.store);
        drop(g);
        let opt = AdamWConfig {
            lr: self.config.lr_at(self.step),
            ..self.config.optimizer()
        };
        adamw_step(&mut self.model.store, &mut self.optimizer, &opt);
        self.model.store.zero_grads();
        self.step += 1;
        Ok(StepStats {
            loss: value,
            speech_dropped,
            speech_used,
        })
    }

    /// Batches for the current epoch, shuffled with an RNG derived from the
    /// seed and epoch number so a resumed run sees the same order.
    pub fn epoch_batches(&self, examples: &[Example], vocab: &CharVocab) -> Vec<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        make_batches(examples, vocab, self.config.batch_size, true, &mut rng)
    }

    /// Runs the current epoch and advances the epoch counter.
    pub fn run_epoch(&mut self, train: &[Example], dev: Option<&[Example]>, vocab: &CharVocab) -> Result<EpochSummary> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.enter_phase();
        let phase = self.phase();
        let batches = self.epoch_batches(train, vocab);
        let mut total = 0.0f64;
        let mut dropped = 0;
        for b in &batches {
            let s = self.train_step(b)?;
            total += s.loss as f64;
            dropped += usize::from(s.speech_dropped > 0);
        }
        let (dev_wer, dev_cer) = match dev {
            Some(d) if !d.is_empty() => {
                let r = evaluate(&self.model, d, vocab, EvalMode::TextSpeech);
                (Some(r.wer), Some(r.cer))
            }
            _ => (None, None),
        };
        let summary = EpochSummary {
            epoch: self.epoch,
            phase,
            steps: batches.len(),
            mean_loss: total / batches.len() as f64,
            batches_speech_dropped: dropped,
            dev_wer,
            dev_cer,
        };
        self.epoch += 1;
        self.enter_phase();
        Ok(summary)
    }

    /// Runs the remaining epochs of the two-phase schedule.
    pub fn fit<O: TrainObserver>(
        &mut self,
        train: &[Example],
        dev: Option<&[Example]>,
        vocab: &CharVocab,
        observer: &mut O,
    ) -> core::result::Result<Vec<EpochSummary>, FitError<O::Error>> {
        let mut log = Vec::new();
        while !self.is_done() {
            let s = self.run_epoch(train, dev, vocab)?;
            observer.on_epoch_end(self, &s).map_err(FitError::Observer)?;
            log.push(s);
        }
        Ok(log)
    }

    /// Eval-mode mean loss over `examples`.
    pub fn dataset_loss(&self, examples: &[Example], vocab: &CharVocab, use_speech: bool) -> Result<Real> {
        let mut total = 0.0f64;
        let mut n = 0usize;
        for chunk in examples.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let batch = Batch::from_examples(&refs, vocab);
            let mels: Vec<Option<&MelSpectrogram>> = batch
                .mels
                .iter()
                .map(|m| if use_speech { m.as_ref() } else { None })
                .collect();
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, &self.model, &batch, &mels)?;
            let k = batch.valid_positions();
            total += g.value(loss).data()[0] as f64 * k as f64;
            n += k;
        }
        if n == 0 {
            return Err(Error::NoValidPositions);
        }
        Ok((total / n as f64) as Real)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let store = &self.model.store;
        Checkpoint {
            model: self.model.config.clone(),
            train: self.config.clone(),
            params: named(store, store.iter().map(|p| p.value.clone())),
            adam_m: named(store, self.optimizer.m.iter().cloned()),
            adam_v: named(store, self.optimizer.v.iter().cloned()),
            adam_t: self.optimizer.t.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = ckpt.to_model()?;
        let store = &model.store;
        check_layout(store, &ckpt.adam_m)?;
        check_layout(store, &ckpt.adam_v)?;
        if ckpt.adam_t.len() != store.len() {
            return Err(Error::Checkpoint("step count table has the wrong length".into()));
        }
        let take = |v: &[NamedTensor]| v.iter().map(|n| n.tensor.clone()).collect::<Vec<_>>();
        let optimizer = OptimizerState {
            m: take(&ckpt.adam_m),
            v: take(&ckpt.adam_v),
            t: ckpt.adam_t.clone(),
        };
        ckpt.train.validate()?;
        let mut t = Trainer {
            model,
            optimizer,
            config: ckpt.train.clone(),
            epoch: ckpt.epoch,
            step: ckpt.step,
            rng: ckpt.rng.restore(),
        };
        t.enter_phase();
        Ok(t)
    }

    /// Replaces parameter values only (fine-tuning from another run).
    pub fn load_params(&mut self, params: &[NamedTensor]) -> Result<()> {
        load_params(&mut self.model.store, params)
    }
}
