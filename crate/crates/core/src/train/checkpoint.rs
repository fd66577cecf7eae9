use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training bit-for-bit: configs, parameters,
/// AdamW moments and step counts, progress counters and the step RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<NamedTensor>,
    pub adam_m: Vec<NamedTensor>,
    pub adam_v: Vec<NamedTensor>,
    pub adam_t: Vec<u64>,
    /// Next epoch to run.
    pub epoch: u32,
    pub step: u64,
    pub rng: RngState,
}

impl Checkpoint {
    /// Rebuilds the model and loads the stored parameter values into it.
    pub fn to_model(&self) -> Result<FusionModel> {
        let mut model = FusionModel::new(self.model.clone(), 0)?;
        load_params(&mut model.store, &self.params)?;
        Ok(model)
    }
}

pub(crate) fn named(store: &ParamStore, tensors: impl Iterator<Item = Tensor>) -> Vec<NamedTensor> {
    store
        .iter()
        .zip(tensors)
        .map(|(p, tensor)| NamedTensor {
            name: p.name.clone(),
            tensor,
        })
        .collect()
}

/// Copies `tensors` into `store`, which must hold the same names and shapes
/// in the same order.
pub(crate) fn load_params(store: &mut ParamStore, tensors: &[NamedTensor]) -> Result<()> {
    check_layout(store, tensors)?;
    for (p, nt) in store.iter_mut().zip(tensors) {
        p.value = nt.tensor.clone();
    }
    Ok(())
}

pub(crate) fn check_layout(store: &ParamStore, tensors: &[NamedTensor]) -> Result<()> {
    if store.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} tensors, checkpoint has {}",
            store.len(),
            tensors.len()
        )));
    }
    for (p, nt) in store.iter().zip(tensors) {
        if p.name != nt.name || p.value.shape() != nt.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "expected {} {:?}, found {} {:?}",
                p.name,
                p.value.shape(),
                nt.name,
                nt.tensor.shape()
            )));
        }
    }
    Ok(())
}
