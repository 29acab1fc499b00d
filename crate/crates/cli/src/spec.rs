use std::path::PathBuf;

use serde::Serialize;
use vtc_core::attention_sim::{ModelDims, PrefillMode};
use vtc_core::dyn_kv::Strategy;
use vtc_core::tokenstream::CompressionConfig;

use crate::HarnessError;

/// Where the visual and text tokens come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Source {
    Synthetic {
        frames: usize,
        tokens_per_frame: usize,
        dim: usize,
        text_tokens: usize,
        perturbation: f64,
    },
    Trace {
        path: PathBuf,
    },
}

/// Everything one simulation run needs; echoed verbatim into its report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub source: Source,
    pub config: CompressionConfig,
    pub dims: ModelDims,
    pub steps: usize,
    pub strategy: Strategy,
    pub prefill: PrefillMode,
    /// Record per-step wall-clock latency (makes reports non-reproducible).
    pub timing: bool,
    pub check_invariants: bool,
}

impl RunSpec {
    /// Compression settings actually applied: the `none` strategy runs the
    /// full-token baseline with both stages disabled.
    pub fn effective_config(&self) -> CompressionConfig {
        if self.strategy == Strategy::None {
            CompressionConfig {
                k_rate: 0.0,
                p_rate: 0.0,
                ..self.config
            }
        } else {
            self.config
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.dims.validate()?;
        self.config.validate_for_layers(self.dims.layers)?;
        if self.steps == 0 {
            return Err(HarnessError::Config("at least one decode step is required".into()));
        }
        if let Source::Synthetic {
            frames,
            tokens_per_frame,
            dim,
            perturbation,
            ..
        } = self.source
        {
            if frames == 0 || tokens_per_frame == 0 || dim == 0 {
                return Err(HarnessError::Config(
                    "frames, tokens per frame and dim must be >= 1".into(),
                ));
            }
            if dim != self.dims.hidden {
                return Err(HarnessError::Config(format!(
                    "grid dim {dim} differs from the model hidden size {}",
                    self.dims.hidden
                )));
            }
            if !perturbation.is_finite() || perturbation < 0.0 {
                return Err(HarnessError::Config("perturbation must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}
