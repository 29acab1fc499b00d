use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use super::{KvError, RetentionDecision};
use crate::attention_sim::KvView;
use crate::scalar::{ceil_count, Scalar};
use crate::tokenstream::TokenId;

/// Cache rows that are never pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum PinnedId {
    Text(u32),
    Generated(u32),
}

/// Key/value rows with provenance, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock<T, I> {
    width: usize,
    ids: Vec<I>,
    keys: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar, I: Copy> KvBlock<T, I> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ids: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, id: I, key: &[T], value: &[T]) {
        assert_eq!(key.len(), self.width);
        assert_eq!(value.len(), self.width);
        self.ids.push(id);
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[I] {
        &self.ids
    }

    pub fn keys(&self) -> &[T] {
        &self.keys
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn key_row(&self, i: usize) -> &[T] {
        &self.keys[i * self.width..(i + 1) * self.width]
    }

    pub fn value_row(&self, i: usize) -> &[T] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    fn clear(&mut self) {
        self.ids.clear();
        self.keys.clear();
        self.values.clear();
    }

    fn push_from(&mut self, other: &Self, i: usize) {
        self.ids.push(other.ids[i]);
        self.keys.extend_from_slice(other.key_row(i));
        self.values.extend_from_slice(other.value_row(i));
    }
}

impl<T: Scalar> KvBlock<T, TokenId> {
    fn fingerprint(&self, i: usize) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.key_row(i).iter().chain(self.value_row(i)) {
            v.to_bits_u64().hash(&mut h);
        }
        h.finish()
    }
}

/// One layer: active visual rows, parked (DP cache) visual rows, and pinned
/// text/generated rows. Visual blocks are sorted by [`TokenId`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<T> {
    pub active: KvBlock<T, TokenId>,
    pub parked: KvBlock<T, TokenId>,
    pub pinned: KvBlock<T, PinnedId>,
}

/// A failed partition/quota/no-loss check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantViolation {
    pub step: usize,
    pub layer: usize,
    pub check: &'static str,
    pub detail: String,
    pub active: Vec<TokenId>,
    pub parked: Vec<TokenId>,
}

/// Per-layer active KV cache plus the parked dynamic-pruning cache.
///
/// Layers up to and including the evaluation layer always hold every stage-1
/// survivor; deeper layers hold `quota` visual tokens active and the rest
/// parked (or discarded, under one-shot pruning).
#[derive(Debug, Clone)]
pub struct DualCache<T> {
    width: usize,
    eval_layer: usize,
    quota: usize,
    survivors: Vec<TokenId>,
    layers: Vec<LayerCache<T>>,
    /// Current active visual set of the pruned layers.
    retained: Vec<TokenId>,
    discarded: Vec<TokenId>,
    pub(super) pruned: bool,
    pub(super) one_shot: bool,
    step: usize,
    log: Vec<RetentionDecision>,
    fingerprints: Option<Vec<HashMap<TokenId, u64>>>,
    /// Reusable buffers for rebuilding a layer's active and parked blocks.
    scratch: (KvBlock<T, TokenId>, KvBlock<T, TokenId>),
}

/// `ceil((1 - p_rate) * survivors)`
pub fn retention_quota(survivors: usize, p_rate: f64) -> usize {
    ceil_count((1.0 - p_rate) * survivors as f64)
}

impl<T: Scalar> DualCache<T> {
    /// Empty cache; `survivors` must be sorted and unique.
    pub fn new(
        layers: usize,
        width: usize,
        survivors: Vec<TokenId>,
        eval_layer: usize,
        p_rate: f64,
    ) -> Result<Self, KvError> {
        assert!(survivors.windows(2).all(|w| w[0] < w[1]), "survivors must be sorted");
        let quota = retention_quota(survivors.len(), p_rate);
        if quota > survivors.len() {
            return Err(KvError::QuotaExceedsPopulation {
                quota,
                population: survivors.len(),
            });
        }
        let layer = LayerCache {
            active: KvBlock::new(width),
            parked: KvBlock::new(width),
            pinned: KvBlock::new(width),
        };
        Ok(Self {
            width,
            eval_layer,
            quota,
            retained: survivors.clone(),
            survivors,
            layers: vec![layer; layers],
            discarded: Vec::new(),
            pruned: false,
            one_shot: false,
            step: 0,
            log: Vec::new(),
            fingerprints: None,
            scratch: (KvBlock::new(width), KvBlock::new(width)),
        })
    }

    /// A membership-only cache (zero-width rows), for driving decisions from
    /// recorded attention without any keys or values.
    pub fn ids_only(layers: usize, survivors: Vec<TokenId>, eval_layer: usize, p_rate: f64) -> Result<Self, KvError> {
        let mut cache = Self::new(layers, 0, survivors, eval_layer, p_rate)?;
        for l in 0..layers {
            for i in 0..cache.survivors.len() {
                let id = cache.survivors[i];
                cache.layers[l].active.push(id, &[], &[]);
            }
        }
        Ok(cache)
    }

    /// Appends a visual row; rows must arrive in [`TokenId`] order.
    pub fn push_visual(&mut self, layer: usize, id: TokenId, key: &[T], value: &[T]) {
        let block = &mut self.layers[layer].active;
        debug_assert!(block.ids().last().is_none_or(|&last| last < id));
        block.push(id, key, value);
    }

    pub fn push_pinned(&mut self, layer: usize, id: PinnedId, key: &[T], value: &[T]) {
        self.layers[layer].pinned.push(id, key, value);
    }

    /// Records the bit pattern of every visual row for later no-loss checks.
    pub fn seal(&mut self) {
        let fp = self
            .layers
            .iter()
            .map(|lc| {
                let mut m = HashMap::new();
                for block in [&lc.active, &lc.parked] {
                    for i in 0..block.len() {
                        m.insert(block.ids()[i], block.fingerprint(i));
                    }
                }
                m
            })
            .collect();
        self.fingerprints = Some(fp);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn eval_layer(&self) -> usize {
        self.eval_layer
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn survivors(&self) -> &[TokenId] {
        &self.survivors
    }

    /// Active visual set of the layers deeper than the evaluation layer.
    pub fn retained(&self) -> &[TokenId] {
        &self.retained
    }

    pub fn discarded(&self) -> &[TokenId] {
        &self.discarded
    }

    pub fn layer(&self, layer: usize) -> &LayerCache<T> {
        &self.layers[layer]
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned
    }

    pub fn is_one_shot(&self) -> bool {
        self.one_shot
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn audit_log(&self) -> &[RetentionDecision] {
        &self.log
    }

    pub(super) fn record(&mut self, decision: RetentionDecision) {
        self.log.push(decision);
    }

    /// Keys/values attended at `layer`, with the visual ids in view order.
    pub fn view(&self, layer: usize) -> (KvView<'_, T>, Vec<TokenId>) {
        let lc = &self.layers[layer];
        let mut view = KvView::new(self.width);
        view.push(lc.active.keys(), lc.active.values());
        let mut ids = lc.active.ids().to_vec();
        if layer <= self.eval_layer {
            view.push(lc.parked.keys(), lc.parked.values());
            ids.extend_from_slice(lc.parked.ids());
        }
        view.push(lc.pinned.keys(), lc.pinned.values());
        (view, ids)
    }

    pub fn active_visual_rows(&self, layer: usize) -> usize {
        self.layers[layer].active.len()
    }

    /// Rows the attention at `layer` reads (visual + pinned).
    pub fn attended_rows(&self, layer: usize) -> usize {
        let lc = &self.layers[layer];
        let parked = if layer <= self.eval_layer { lc.parked.len() } else { 0 };
        lc.active.len() + parked + lc.pinned.len()
    }

    pub fn parked_rows(&self, layer: usize) -> usize {
        self.layers[layer].parked.len()
    }

    /// Bytes held by active (attended) rows across all layers: rows × width × 4 × 2 (K and V).
    pub fn active_bytes(&self) -> usize {
        (0..self.layers.len()).map(|l| self.attended_rows(l)).sum::<usize>() * self.width * 4 * 2
    }

    /// Bytes held by the parked rows of the dynamic-pruning cache.
    pub fn parked_bytes(&self) -> usize {
        self.layers.iter().map(|lc| lc.parked.len()).sum::<usize>() * self.width * 4 * 2
    }

    /// Makes `retained` the active visual set of every layer deeper than the
    /// evaluation layer. Rows leave for the parked cache, or are dropped when
    /// `discard` is set. Returns `(readmitted, evicted)`.
    pub(super) fn apply_retention(
        &mut self,
        retained: &[TokenId],
        discard: bool,
    ) -> Result<(Vec<TokenId>, Vec<TokenId>), KvError> {
        let readmitted: Vec<TokenId> = retained
            .iter()
            .filter(|id| self.retained.binary_search(id).is_err())
            .copied()
            .collect();
        let evicted: Vec<TokenId> = self
            .retained
            .iter()
            .filter(|id| retained.binary_search(id).is_err())
            .copied()
            .collect();
        if readmitted.is_empty() && evicted.is_empty() && !discard {
            return Ok((readmitted, evicted));
        }
        for layer in self.eval_layer + 1..self.layers.len() {
            let lc = &self.layers[layer];
            let (active, parked) = &mut self.scratch;
            active.clear();
            parked.clear();
            let (mut a, mut p) = (0, 0);
            // merge the two sorted blocks
            while a < lc.active.len() || p < lc.parked.len() {
                let take_active =
                    p >= lc.parked.len() || (a < lc.active.len() && lc.active.ids()[a] < lc.parked.ids()[p]);
                let (src, i) = if take_active {
                    a += 1;
                    (&lc.active, a - 1)
                } else {
                    p += 1;
                    (&lc.parked, p - 1)
                };
                if retained.binary_search(&src.ids()[i]).is_ok() {
                    active.push_from(src, i);
                } else if !discard {
                    parked.push_from(src, i);
                }
            }
            if active.len() != retained.len() {
                let missing = retained
                    .iter()
                    .find(|id| active.ids().binary_search(id).is_err())
                    .copied()
                    .expect("a retained id is missing");
                return Err(KvError::MissingParkedRow { layer, id: missing });
            }
            let lc = &mut self.layers[layer];
            std::mem::swap(&mut lc.active, &mut self.scratch.0);
            std::mem::swap(&mut lc.parked, &mut self.scratch.1);
        }
        if discard {
            self.discarded.extend(evicted.iter().copied());
            self.discarded.sort_unstable();
        }
        self.retained = retained.to_vec();
        Ok((readmitted, evicted))
    }

    /// Partition, quota and (once sealed) no-loss checks on every layer.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        for (layer, lc) in self.layers.iter().enumerate() {
            let fail = |check: &'static str, detail: String| InvariantViolation {
                step: self.step,
                layer,
                check,
                detail,
                active: lc.active.ids().to_vec(),
                parked: lc.parked.ids().to_vec(),
            };
            let active = lc.active.ids();
            let parked = lc.parked.ids();
            if !active.windows(2).all(|w| w[0] < w[1]) || !parked.windows(2).all(|w| w[0] < w[1]) {
                return Err(fail("order", "visual blocks are not sorted".into()));
            }
            let discarded: &[TokenId] = if layer > self.eval_layer { &self.discarded } else { &[] };
            let mut union: Vec<TokenId> = active.iter().chain(parked).chain(discarded).copied().collect();
            let parts = union.len();
            union.sort_unstable();
            union.dedup();
            if union.len() != parts {
                return Err(fail("partition", "active, parked and discarded overlap".into()));
            }
            if layer <= self.eval_layer {
                if active != self.survivors.as_slice() || !parked.is_empty() {
                    return Err(fail(
                        "partition",
                        "layers up to the evaluation layer must hold every survivor".into(),
                    ));
                }
            } else {
                let mut held: Vec<TokenId> = active.iter().chain(parked).copied().collect();
                held.sort_unstable();
                let mut expected = self.survivors.clone();
                expected.retain(|id| self.discarded.binary_search(id).is_err());
                if held != expected || expected.len() + self.discarded.len() != self.survivors.len() {
                    return Err(fail("partition", "active ∪ parked ∪ discarded ≠ survivors".into()));
                }
                let want = if self.pruned { self.quota } else { self.survivors.len() };
                if active.len() != want {
                    return Err(fail(
                        "quota",
                        format!("{} active visual rows, expected {want}", active.len()),
                    ));
                }
                if active != self.retained.as_slice() {
                    return Err(fail("partition", "layer disagrees with the retained set".into()));
                }
            }
            if let Some(fp) = &self.fingerprints {
                for block in [&lc.active, &lc.parked] {
                    for i in 0..block.len() {
                        let id = block.ids()[i];
                        if fp[layer].get(&id) != Some(&block.fingerprint(i)) {
                            return Err(fail("no-loss", format!("row {id} changed while cached")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
