//! Causal transformer language model trained from scratch.

pub mod checkpoint;
pub mod decode;
pub mod model;
pub mod optim;
pub mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{Role, Segment};

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint};
pub use decode::{argmax, greedy_decode, DecodeSession, KvSession};
pub use model::{nll_loss, parameter_layout, AttentionMaps, ForwardOutput, Mode, Transformer};
pub use optim::{AdamConfig, OptimizerState, Schedule};
pub use tensor::{Parameters, Scalar, Tensor};

/// Which embedding tables are summed into each position's input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    TokenPosition,
    TokenPositionRoleSegment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_multiplier: f64,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub role_count: usize,
    pub segment_count: usize,
    pub embedding_mode: EmbeddingMode,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden: 64,
            ffn_multiplier: 4.0,
            vocab_size: 0,
            max_positions: 256,
            role_count: Role::COUNT,
            segment_count: Segment::COUNT,
            embedding_mode: EmbeddingMode::TokenPositionRoleSegment,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn ffn_dim(&self) -> usize {
        ((self.hidden as f64) * self.ffn_multiplier).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return fail(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if !(self.ffn_multiplier > 0.0) || self.ffn_dim() == 0 {
            return fail(format!("ffn_multiplier {} gives an empty feed-forward layer", self.ffn_multiplier));
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if self.role_count < Role::COUNT || self.segment_count < Segment::COUNT {
            return fail(format!(
                "role_count {} / segment_count {} below the {} roles and {} segments in use",
                self.role_count,
                self.segment_count,
                Role::COUNT,
                Segment::COUNT
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
