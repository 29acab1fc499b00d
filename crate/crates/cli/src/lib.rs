//! Harness around `vtc-core`: end-to-end simulation, parameter sweeps, trace
//! replay, cost reports and decode benchmarks. The `vtc` binary is a thin
//! argument parser over these functions.

pub mod bench;
pub mod replay;
pub mod report;
pub mod simulate;
pub mod spec;
pub mod sweep;

use thiserror::Error;
use vtc_core::dyn_kv::InvariantViolation;

pub use spec::{RunSpec, Source};

/// `<crate version>+<git describe>` of the build that produced a report.
pub fn build_stamp() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("VTC_BUILD_STAMP"))
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace has no attention block for step {step} at layer {layer}")]
    MissingAttentionBlock { step: u32, layer: u32 },
    #[error("invariant violation at step {} layer {}: {} ({})", .0.step, .0.layer, .0.check, .0.detail)]
    Invariant(Box<InvariantViolation>),
    #[error(transparent)]
    Core(#[from] vtc_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// 2 for bad input, 3 for invariant violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingAttentionBlock { .. } => 2,
            Self::Core(
                vtc_core::Error::Config(_)
                | vtc_core::Error::Dims(_)
                | vtc_core::Error::Grid(_)
                | vtc_core::Error::Trace(_)
                | vtc_core::Error::Cost(vtc_core::costmodel::CostError::InvalidInputs(_)),
            ) => 2,
            Self::Invariant(_) => 3,
            _ => 1,
        }
    }
}

macro_rules! core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                Self::Core(e.into())
            }
        }
    )*};
}

core_error!(
    vtc_core::tokenstream::ConfigError,
    vtc_core::tokenstream::TraceError,
    vtc_core::attention_sim::DimsError,
    vtc_core::costmodel::CostError
);

impl From<vtc_core::dyn_kv::KvError> for HarnessError {
    fn from(e: vtc_core::dyn_kv::KvError) -> Self {
        match e {
            vtc_core::dyn_kv::KvError::Invariant(v) => Self::Invariant(v),
            other => Self::Core(other.into()),
        }
    }
}

impl From<vtc_core::attention_sim::DecodeError> for HarnessError {
    fn from(e: vtc_core::attention_sim::DecodeError) -> Self {
        match e {
            vtc_core::attention_sim::DecodeError::Kv(kv) => kv.into(),
            other => Self::Core(other.into()),
        }
    }
}
