use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{dynamic_swap, initial_prune, one_shot_prune, random_prune, DualCache, KvError, RetentionDecision};
use crate::attention_sim::{AttentionSnapshot, StepHook};
use crate::scalar::Scalar;
use crate::tokenstream::{CompressionConfig, ConfigError};

/// Stage-2 policy applied during decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Dynamic pruning with readmission from the parked cache.
    #[serde(rename = "dycoke")]
    Dynamic,
    /// Prune once at the first decode step, never readmit.
    OneShot,
    /// Seeded random subset at the first decode step, never readmit.
    Random,
    /// No stage-2 pruning.
    None,
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dycoke" | "dynamic" => Ok(Self::Dynamic),
            "one_shot" | "one-shot" => Ok(Self::OneShot),
            "random" => Ok(Self::Random),
            "none" => Ok(Self::None),
            _ => Err(ConfigError::UnknownVariant {
                kind: "strategy",
                value: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dynamic => "dycoke",
            Self::OneShot => "one_shot",
            Self::Random => "random",
            Self::None => "none",
        })
    }
}

/// Drives a [`Strategy`] from the decoder's per-step snapshots.
#[derive(Debug, Clone)]
pub struct Pruner {
    pub strategy: Strategy,
    pub config: CompressionConfig,
    /// Verify partition/quota/no-loss after every decision.
    pub check_invariants: bool,
    pub last: Option<RetentionDecision>,
}

impl Pruner {
    pub fn new(strategy: Strategy, config: CompressionConfig) -> Self {
        Self {
            strategy,
            config,
            check_invariants: true,
            last: None,
        }
    }

    pub fn apply<T: Scalar>(&mut self, snapshot: &AttentionSnapshot, cache: &mut DualCache<T>) -> Result<(), KvError> {
        let first = !cache.is_pruned();
        let decision = match (self.strategy, first) {
            (Strategy::None, _) => None,
            (Strategy::Dynamic, true) => Some(initial_prune(snapshot, cache, &self.config)?),
            (Strategy::OneShot, true) => Some(one_shot_prune(snapshot, cache, &self.config)?),
            (Strategy::Random, true) => Some(random_prune(cache, &self.config, self.config.seed)?),
            (_, false) => Some(dynamic_swap(snapshot, cache, &self.config)?),
        };
        self.last = decision;
        if self.check_invariants {
            cache.check_invariants().map_err(|v| KvError::Invariant(Box::new(v)))?;
        }
        Ok(())
    }
}

impl<T: Scalar> StepHook<T> for Pruner {
    fn on_snapshot(&mut self, snapshot: &AttentionSnapshot, cache: &mut DualCache<T>) -> Result<(), KvError> {
        self.apply(snapshot, cache)
    }
}
