//! Stage 2: dynamic KV-cache pruning during decode.
//!
//! Every decode step the evaluation layer's attention row ranks all stage-1
//! survivors. The top `ceil((1 - p_rate) * survivors)` stay active in the
//! deeper layers; the rest are parked in the dynamic-pruning cache and are
//! readmitted, with their original key/value rows, once they rank in the top
//! set again.

mod cache;
mod strategy;

use std::io::{self, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use cache::{retention_quota, DualCache, InvariantViolation, KvBlock, LayerCache, PinnedId};
pub use strategy::{Pruner, Strategy};

use crate::attention_sim::AttentionSnapshot;
use crate::scalar::Scalar;
use crate::tokenstream::{CompressionConfig, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("retention quota {quota} exceeds the {population} survivor tokens")]
    QuotaExceedsPopulation { quota: usize, population: usize },
    #[error("token {id} missing from both caches of layer {layer}")]
    MissingParkedRow { layer: usize, id: TokenId },
    #[error("snapshot scores {found} tokens, the cache holds {expected} survivors")]
    SnapshotMismatch { expected: usize, found: usize },
    #[error("config evaluation layer {config} differs from the cache's {cache}")]
    EvalLayerMismatch { config: usize, cache: usize },
    #[error("invariant violation at step {} layer {}: {} ({})", .0.step, .0.layer, .0.check, .0.detail)]
    Invariant(Box<InvariantViolation>),
}

/// Outcome of one ranking pass; appended to the cache's audit log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionDecision {
    pub step: usize,
    pub retained_ids: Vec<TokenId>,
    /// Score of the last retained token (`None` for random selection).
    pub threshold: Option<f64>,
    pub readmitted: Vec<TokenId>,
    pub evicted: Vec<TokenId>,
}

impl RetentionDecision {
    /// Readmitted plus evicted tokens.
    pub fn churn(&self) -> usize {
        self.readmitted.len() + self.evicted.len()
    }
}

/// The `quota` highest-scoring ids, sorted by id, and the lowest retained score.
/// Ties prefer the lower [`TokenId`].
pub fn top_quota(ids: &[TokenId], scores: &[f64], quota: usize) -> (Vec<TokenId>, Option<f64>) {
    debug_assert_eq!(ids.len(), scores.len());
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order.truncate(quota);
    let threshold = order.last().map(|&i| scores[i]);
    let mut retained: Vec<TokenId> = order.into_iter().map(|i| ids[i]).collect();
    retained.sort_unstable();
    (retained, threshold)
}

fn check_inputs<T: Scalar>(
    snapshot: Option<&AttentionSnapshot>,
    cache: &DualCache<T>,
    config: &CompressionConfig,
) -> Result<(), KvError> {
    if config.eval_layer != cache.eval_layer() {
        return Err(KvError::EvalLayerMismatch {
            config: config.eval_layer,
            cache: cache.eval_layer(),
        });
    }
    if cache.quota() > cache.survivors().len() {
        return Err(KvError::QuotaExceedsPopulation {
            quota: cache.quota(),
            population: cache.survivors().len(),
        });
    }
    if let Some(s) = snapshot {
        if s.ids != cache.survivors() {
            return Err(KvError::SnapshotMismatch {
                expected: cache.survivors().len(),
                found: s.ids.len(),
            });
        }
    }
    Ok(())
}

fn decide<T: Scalar>(
    cache: &mut DualCache<T>,
    retained: Vec<TokenId>,
    threshold: Option<f64>,
    discard: bool,
) -> Result<RetentionDecision, KvError> {
    let (readmitted, evicted) = cache.apply_retention(&retained, discard)?;
    cache.pruned = true;
    cache.one_shot |= discard;
    let decision = RetentionDecision {
        step: cache.step(),
        retained_ids: retained,
        threshold,
        readmitted,
        evicted,
    };
    cache.record(decision.clone());
    Ok(decision)
}

/// First-step pruning: keep the top-quota tokens active in layers deeper than
/// the evaluation layer and park the rest.
pub fn initial_prune<T: Scalar>(
    snapshot: &AttentionSnapshot,
    cache: &mut DualCache<T>,
    config: &CompressionConfig,
) -> Result<RetentionDecision, KvError> {
    check_inputs(Some(snapshot), cache, config)?;
    let (retained, tau) = top_quota(&snapshot.ids, &snapshot.scores, cache.quota());
    decide(cache, retained, tau, false)
}

/// Re-rank every survivor and swap rows between the active and parked caches.
/// A no-op once the cache was pruned one-shot.
pub fn dynamic_swap<T: Scalar>(
    snapshot: &AttentionSnapshot,
    cache: &mut DualCache<T>,
    config: &CompressionConfig,
) -> Result<RetentionDecision, KvError> {
    check_inputs(Some(snapshot), cache, config)?;
    if cache.is_one_shot() {
        let decision = RetentionDecision {
            step: cache.step(),
            retained_ids: cache.retained().to_vec(),
            threshold: None,
            readmitted: Vec::new(),
            evicted: Vec::new(),
        };
        cache.record(decision.clone());
        return Ok(decision);
    }
    let (retained, tau) = top_quota(&snapshot.ids, &snapshot.scores, cache.quota());
    decide(cache, retained, tau, false)
}

/// Like [`initial_prune`] but pruned tokens are dropped for good.
pub fn one_shot_prune<T: Scalar>(
    snapshot: &AttentionSnapshot,
    cache: &mut DualCache<T>,
    config: &CompressionConfig,
) -> Result<RetentionDecision, KvError> {
    check_inputs(Some(snapshot), cache, config)?;
    let (retained, tau) = top_quota(&snapshot.ids, &snapshot.scores, cache.quota());
    decide(cache, retained, tau, true)
}

/// Uniformly random quota-sized subset (seeded), one-shot semantics.
pub fn random_prune<T: Scalar>(
    cache: &mut DualCache<T>,
    config: &CompressionConfig,
    seed: u64,
) -> Result<RetentionDecision, KvError> {
    check_inputs(None, cache, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained: Vec<TokenId> = sample(&mut rng, cache.survivors().len(), cache.quota())
        .into_iter()
        .map(|i| cache.survivors()[i])
        .collect();
    retained.sort_unstable();
    decide(cache, retained, None, true)
}

/// One JSON object per decision and line.
pub fn write_audit_jsonl<W: Write>(mut out: W, log: &[RetentionDecision]) -> io::Result<()> {
    for d in log {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `|a ∩ b| / |a ∪ b|` for sorted id lists; 1 when both are empty.
pub fn jaccard(a: &[TokenId], b: &[TokenId]) -> f64 {
    let (mut i, mut j, mut both) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}

#[cfg(test)]
mod tests;
