//! Training-free visual token compression for video LLM inference.
//!
//! Stage 1 ([`ttm`]) merges temporally redundant visual tokens before the
//! prompt is formed. Stage 2 ([`dyn_kv`]) prunes the KV cache during decode
//! using the attention of an evaluation layer, parking pruned rows so they can
//! be readmitted later. [`attention_sim`] provides the decoder those stages
//! instrument and [`costmodel`] the analytic FLOPs accounting.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); retained ratios are
//! additionally available over exact rationals ([`ExactRatio`]).

pub mod attention_sim;
pub mod costmodel;
pub mod dyn_kv;
pub mod scalar;
pub mod tokenstream;
pub mod ttm;

use thiserror::Error;

pub use attention_sim::{AttentionSnapshot, Decoder, ModelDims};
pub use dyn_kv::{DualCache, RetentionDecision, Strategy};
pub use scalar::Scalar;
pub use tokenstream::{CompressionConfig, TextTokens, TokenId, VisualTokenGrid};
pub use ttm::TtmResult;

pub type Grid = VisualTokenGrid<f32>;
pub type Grid64 = VisualTokenGrid<f64>;
pub type Text = TextTokens<f32>;
pub type Text64 = TextTokens<f64>;
pub type Decoder32 = Decoder<f32>;
pub type Decoder64 = Decoder<f64>;
pub type Cache = DualCache<f32>;
pub type Cache64 = DualCache<f64>;
pub type ExactRatio = num_rational::Ratio<i64>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] tokenstream::ConfigError),
    #[error(transparent)]
    Grid(#[from] tokenstream::GridError),
    #[error(transparent)]
    Trace(#[from] tokenstream::TraceError),
    #[error(transparent)]
    Dims(#[from] attention_sim::DimsError),
    #[error(transparent)]
    Attention(#[from] attention_sim::AttentionError),
    #[error(transparent)]
    Decode(#[from] attention_sim::DecodeError),
    #[error(transparent)]
    Kv(#[from] dyn_kv::KvError),
    #[error(transparent)]
    Cost(#[from] costmodel::CostError),
}
