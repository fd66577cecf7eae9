use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Which keys each query may attend to. Every query row allows at least one key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::Shape {
                op: "attention_mask",
                detail: alloc::format!("{} flags for {}x{}", allowed.len(), queries, keys),
            });
        }
        for q in 0..queries {
            if !allowed[q * keys..(q + 1) * keys].iter().any(|&a| a) {
                return Err(Error::EmptyMaskRow(q));
            }
        }
        Ok(AttentionMask {
            queries,
            keys,
            allowed,
        })
    }

    pub fn full(queries: usize, keys: usize) -> Self {
        AttentionMask {
            queries,
            keys,
            allowed: vec![true; queries * keys],
        }
    }

    /// Every query sees exactly the valid keys.
    pub fn key_padding(queries: usize, key_valid: &[bool]) -> Result<Self> {
        let mut allowed = Vec::with_capacity(queries * key_valid.len());
        for _ in 0..queries {
            allowed.extend_from_slice(key_valid);
        }
        Self::new(queries, key_valid.len(), allowed)
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    #[inline]
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }
}
