use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DimsError {
    #[error("hidden size {hidden} is not divisible by {heads} heads")]
    HeadsDoNotDivide { hidden: usize, heads: usize },
    #[error("model dimensions must be >= 1")]
    Zero,
    #[error("unknown model preset '{0}' (expected 0.5b, 7b or 72b)")]
    UnknownPreset(String),
}

/// Published sizes of the three evaluated video LLM backbones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelPreset {
    #[serde(rename = "0.5b")]
    Small,
    #[serde(rename = "7b")]
    Medium,
    #[serde(rename = "72b")]
    Large,
}

impl FromStr for ModelPreset {
    type Err = DimsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "0.5b" => Ok(Self::Small),
            "7b" => Ok(Self::Medium),
            "72b" => Ok(Self::Large),
            _ => Err(DimsError::UnknownPreset(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub layers: usize,
    pub hidden: usize,
    pub ffn_inner: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn new(layers: usize, hidden: usize, ffn_inner: usize, heads: usize) -> Result<Self, DimsError> {
        let dims = Self {
            layers,
            hidden,
            ffn_inner,
            heads,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Hidden size, FFN width and depth from the model card; head counts are
    /// those of the underlying language model.
    pub fn preset(p: ModelPreset) -> Self {
        match p {
            ModelPreset::Small => Self {
                layers: 24,
                hidden: 896,
                ffn_inner: 4864,
                heads: 14,
            },
            ModelPreset::Medium => Self {
                layers: 28,
                hidden: 3584,
                ffn_inner: 18944,
                heads: 28,
            },
            ModelPreset::Large => Self {
                layers: 80,
                hidden: 8192,
                ffn_inner: 29568,
                heads: 64,
            },
        }
    }

    pub fn validate(&self) -> Result<(), DimsError> {
        if self.layers == 0 || self.hidden == 0 || self.ffn_inner == 0 || self.heads == 0 {
            return Err(DimsError::Zero);
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(DimsError::HeadsDoNotDivide {
                hidden: self.hidden,
                heads: self.heads,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        for p in [ModelPreset::Small, ModelPreset::Medium, ModelPreset::Large] {
            ModelDims::preset(p).validate().unwrap();
        }
        assert_eq!(ModelDims::preset("7b".parse().unwrap()).hidden, 3584);
        assert_eq!(
            ModelDims::new(2, 10, 4, 3),
            Err(DimsError::HeadsDoNotDivide { hidden: 10, heads: 3 })
        );
    }
}
