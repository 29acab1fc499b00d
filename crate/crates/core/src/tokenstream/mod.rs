//! Token data model shared by every stage: visual token grids with
//! `(frame, position)` provenance, text tokens, the compression
//! configuration, deterministic synthetic grids and the binary trace format.

mod config;
mod grid;
mod synth;
pub mod trace;

pub use config::{CompressionConfig, ConfigError, MergeMode, ScoreScale};
pub use grid::{GridError, TextTokens, TokenId, VisualTokenGrid};
pub use synth::{synth_grid, synth_grid_with, synth_text, DEFAULT_PERTURBATION};
pub use trace::{load_trace, write_trace, AttentionBlock, Trace, TraceError};
