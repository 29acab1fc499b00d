//! Deterministic toy transformer decoder: QKV projection, multi-head softmax
//! attention over a KV cache, and a residual attention + FFN stack.

mod decoder;
mod dims;
mod ops;
mod weights;

pub use decoder::{
    reference_decode, DecodeError, Decoder, DecoderState, NoPruning, PrefillMode, ReferenceStep, StepHook, StepOutput,
};
pub use dims::{DimsError, ModelDims, ModelPreset};
pub use ops::{attention_row, project_qkv, softmax_in_place, AttentionError, AttentionOutput, KvView, Qkv};
pub use weights::LayerWeights;

use serde::Serialize;

use crate::tokenstream::TokenId;

/// Head-averaged attention of one decode step's query at one layer,
/// restricted to the scoreable visual tokens and sorted by [`TokenId`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionSnapshot {
    pub step: usize,
    pub layer: usize,
    pub ids: Vec<TokenId>,
    pub scores: Vec<f64>,
    /// Attention mass on text and generated columns of the same row.
    pub other_mass: f64,
}

impl AttentionSnapshot {
    /// Sum of the complete softmax row (visual + text + generated columns).
    pub fn row_total(&self) -> f64 {
        self.scores.iter().sum::<f64>() + self.other_mass
    }
}
