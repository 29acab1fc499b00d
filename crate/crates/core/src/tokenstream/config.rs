use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{name} must lie in [0, 1], got {value}")]
    RateOutOfRange { name: &'static str, value: f64 },
    #[error("window_len must be even and >= 2, got {0}")]
    BadWindow(usize),
    #[error("eval_layer {eval_layer} must be below the layer count {layers}")]
    EvalLayerOutOfRange { eval_layer: usize, layers: usize },
    #[error("heads must be >= 1")]
    NoHeads,
    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },
}

/// What happens to a token merged away by temporal merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Drop the redundant token; the kept counterpart is left unchanged.
    #[default]
    Drop,
    /// Experimental: replace the kept token by the mean of itself and everything merged into it.
    Mean,
}

impl FromStr for MergeMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(Self::Drop),
            "mean" => Ok(Self::Mean),
            _ => Err(ConfigError::UnknownVariant {
                kind: "merge mode",
                value: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drop => "drop",
            Self::Mean => "mean",
        })
    }
}

/// Denominator of the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    /// `sqrt(head_dim)`, standard multi-head practice.
    #[default]
    Head,
    /// `sqrt(hidden)`, the full model width.
    Full,
}

impl FromStr for ScoreScale {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(Self::Head),
            "full" => Ok(Self::Full),
            _ => Err(ConfigError::UnknownVariant {
                kind: "score scale",
                value: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for ScoreScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Head => "head",
            Self::Full => "full",
        })
    }
}

/// Hyperparameters of both compression stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// Stage-1 pruning rate applied to every prunable frame of a window.
    pub k_rate: f64,
    /// Layer whose attention row drives stage-2 decisions.
    pub eval_layer: usize,
    /// Stage-2 pruning rate; `1 - p_rate` of the survivors stay active.
    pub p_rate: f64,
    pub window_len: usize,
    pub heads: usize,
    pub seed: u64,
    pub merge_mode: MergeMode,
    pub scale: ScoreScale,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            k_rate: 0.7,
            eval_layer: 3,
            p_rate: 0.7,
            window_len: 4,
            heads: 4,
            seed: 0,
            merge_mode: MergeMode::Drop,
            scale: ScoreScale::Head,
        }
    }
}

impl CompressionConfig {
    /// A config that disables both stages.
    pub fn disabled() -> Self {
        Self {
            k_rate: 0.0,
            p_rate: 0.0,
            ..Self::default()
        }
    }

    /// Checks everything that does not depend on the model.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [("k_rate", self.k_rate), ("p_rate", self.p_rate)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::RateOutOfRange { name, value });
            }
        }
        if self.window_len < 2 || !self.window_len.is_multiple_of(2) {
            return Err(ConfigError::BadWindow(self.window_len));
        }
        if self.heads == 0 {
            return Err(ConfigError::NoHeads);
        }
        Ok(())
    }

    pub fn validate_for_layers(&self, layers: usize) -> Result<(), ConfigError> {
        self.validate()?;
        if self.eval_layer >= layers {
            return Err(ConfigError::EvalLayerOutOfRange {
                eval_layer: self.eval_layer,
                layers,
            });
        }
        Ok(())
    }
}
