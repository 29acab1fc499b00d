use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dims::ModelDims;
use super::ops::{attention_row, project_qkv, AttentionError, AttentionOutput, KvView};
use super::weights::{uniform_matrix, LayerWeights};
use super::AttentionSnapshot;
use crate::dyn_kv::{DualCache, KvError, PinnedId};
use crate::scalar::{vec_mat, Scalar};
use crate::tokenstream::{ScoreScale, TextTokens, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

/// Called once per decode step with the evaluation layer's snapshot, before
/// the deeper layers run.
pub trait StepHook<T> {
    fn on_snapshot(&mut self, snapshot: &AttentionSnapshot, cache: &mut DualCache<T>) -> Result<(), KvError>;
}

/// Leaves the cache untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPruning;

impl<T> StepHook<T> for NoPruning {
    fn on_snapshot(&mut self, _: &AttentionSnapshot, _: &mut DualCache<T>) -> Result<(), KvError> {
        Ok(())
    }
}

/// How prompt keys and values are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillMode {
    /// Causal forward pass over the whole prompt; quadratic in prompt length.
    #[default]
    Exact,
    /// Every layer projects the raw prompt embeddings (no mixing across
    /// prompt tokens); linear in prompt length, for large shapes.
    Projected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    /// Embedding of the token processed by the next step.
    pub input: Vec<T>,
    pub token: u32,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    /// Final-layer hidden state of the processed token.
    pub hidden: Vec<T>,
    /// Greedy next token.
    pub token: u32,
    pub snapshot: AttentionSnapshot,
}

/// Seeded multi-layer decoder with residual attention + ReLU FFN blocks and
/// greedy argmax decoding over a small fixed vocabulary.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    pub dims: ModelDims,
    pub scale: ScoreScale,
    layers: Vec<LayerWeights<T>>,
    vocab: usize,
    embed: Vec<T>,
    unembed: Vec<T>,
}

pub const DEFAULT_VOCAB: usize = 64;

impl<T: Scalar> Decoder<T> {
    pub fn new(dims: ModelDims, seed: u64, scale: ScoreScale) -> Self {
        let layers = (0..dims.layers)
            .map(|l| LayerWeights::generate(&dims, seed, l))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let vocab = DEFAULT_VOCAB;
        let embed = uniform_matrix(&mut rng, 1, vocab * dims.hidden, 1.0);
        let unembed = uniform_matrix(&mut rng, dims.hidden, vocab, 1.0);
        Self {
            dims,
            scale,
            layers,
            vocab,
            embed,
            unembed,
        }
    }

    pub fn with_layers(dims: ModelDims, layers: Vec<LayerWeights<T>>, seed: u64, scale: ScoreScale) -> Self {
        assert_eq!(layers.len(), dims.layers);
        let mut d = Self::new(ModelDims { layers: 0, ..dims }, seed, scale);
        d.dims = dims;
        d.layers = layers;
        d
    }

    pub fn layer_weights(&self, layer: usize) -> &LayerWeights<T> {
        &self.layers[layer]
    }

    pub fn scale_dim(&self) -> usize {
        match self.scale {
            ScoreScale::Head => self.dims.head_dim(),
            ScoreScale::Full => self.dims.hidden,
        }
    }

    pub fn embedding(&self, token: u32) -> &[T] {
        let d = self.dims.hidden;
        &self.embed[token as usize * d..(token as usize + 1) * d]
    }

    /// Argmax of the output projection; ties pick the lower token.
    pub fn next_token(&self, hidden: &[T]) -> u32 {
        let mut logits = vec![T::zero(); self.vocab];
        vec_mat(hidden, &self.unembed, self.vocab, &mut logits);
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best as u32
    }

    pub(crate) fn attend(&self, query: &[T], view: &KvView<'_, T>) -> Result<AttentionOutput<T>, AttentionError> {
        attention_row(query, view, self.dims.heads, self.scale_dim())
    }

    /// `h += attn · W_O`, then `h += relu(h · W_up) · W_down`.
    pub(crate) fn finish_layer(&self, layer: usize, h: &mut [T], attn: &[T]) {
        let w = &self.layers[layer];
        let d = self.dims.hidden;
        let mut o = vec![T::zero(); d];
        vec_mat(attn, &w.w_o, d, &mut o);
        h.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
        let mut inner = vec![T::zero(); w.ffn_inner];
        vec_mat(h, &w.w_up, w.ffn_inner, &mut inner);
        inner.iter_mut().for_each(|v| *v = v.max(T::zero()));
        vec_mat(&inner, &w.w_down, d, &mut o);
        h.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
    }

    /// Runs the prompt (visual survivors, then text) and fills a fresh cache.
    ///
    /// `visual_rows` holds one row per id in `visual_ids` (sorted).
    pub fn prefill(
        &self,
        visual_ids: &[TokenId],
        visual_rows: &[T],
        text: &TextTokens<T>,
        eval_layer: usize,
        p_rate: f64,
        mode: PrefillMode,
    ) -> Result<(DualCache<T>, DecoderState<T>), DecodeError> {
        let d = self.dims.hidden;
        if text.hidden_dim() != d || visual_rows.len() != visual_ids.len() * d {
            return Err(AttentionError::DimensionMismatch {
                expected: d,
                found: text.hidden_dim(),
            }
            .into());
        }
        let mut cache = DualCache::new(self.dims.layers, d, visual_ids.to_vec(), eval_layer, p_rate)?;
        let mut x: Vec<T> = visual_rows.iter().chain(text.data()).copied().collect();
        let n = x.len() / d;
        let nv = visual_ids.len();
        for l in 0..self.dims.layers {
            let qkv = project_qkv(&x, d, &self.layers[l])?;
            let rows = qkv.k.chunks_exact(d).zip(qkv.v.chunks_exact(d));
            for (i, (k, v)) in rows.enumerate() {
                match visual_ids.get(i) {
                    Some(&id) => cache.push_visual(l, id, k, v),
                    None => cache.push_pinned(l, PinnedId::Text((i - nv) as u32), k, v),
                }
            }
            if mode == PrefillMode::Exact {
                for i in 0..n {
                    let view = KvView::single(d, &qkv.k[..(i + 1) * d], &qkv.v[..(i + 1) * d]);
                    let out = self.attend(&qkv.q[i * d..(i + 1) * d], &view)?;
                    self.finish_layer(l, &mut x[i * d..(i + 1) * d], &out.output);
                }
            }
        }
        cache.seal();
        let token = self.next_token(&x[(n - 1) * d..]);
        let state = DecoderState {
            input: self.embedding(token).to_vec(),
            token,
            step: 0,
        };
        Ok((cache, state))
    }

    /// Cache filled with seeded random key/value rows instead of a prefill pass.
    pub fn synthetic_cache(
        &self,
        survivors: Vec<TokenId>,
        text_tokens: usize,
        eval_layer: usize,
        p_rate: f64,
        seed: u64,
    ) -> Result<(DualCache<T>, DecoderState<T>), DecodeError> {
        let d = self.dims.hidden;
        let mut cache = DualCache::new(self.dims.layers, d, survivors.clone(), eval_layer, p_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-1.0f64, 1.0);
        let row = |rng: &mut ChaCha8Rng| -> Vec<T> { (0..d).map(|_| T::from_f64_lossy(dist.sample(rng))).collect() };
        for l in 0..self.dims.layers {
            for &id in &survivors {
                let (k, v) = (row(&mut rng), row(&mut rng));
                cache.push_visual(l, id, &k, &v);
            }
            for t in 0..text_tokens {
                let (k, v) = (row(&mut rng), row(&mut rng));
                cache.push_pinned(l, PinnedId::Text(t as u32), &k, &v);
            }
        }
        let state = DecoderState {
            input: self.embedding(0).to_vec(),
            token: 0,
            step: 0,
        };
        Ok((cache, state))
    }

    /// One cached decode step: appends the token's K/V to every layer, emits
    /// the evaluation-layer snapshot to `hook`, and returns the greedy next token.
    pub fn decode_step(
        &self,
        state: &mut DecoderState<T>,
        cache: &mut DualCache<T>,
        hook: &mut dyn StepHook<T>,
    ) -> Result<StepOutput<T>, DecodeError> {
        let d = self.dims.hidden;
        let eval_layer = cache.eval_layer();
        cache.set_step(state.step);
        let mut h = state.input.clone();
        let mut snapshot = None;
        let (mut q, mut k, mut v) = (vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]);
        for l in 0..self.dims.layers {
            let w = &self.layers[l];
            vec_mat(&h, &w.w_q, d, &mut q);
            vec_mat(&h, &w.w_k, d, &mut k);
            vec_mat(&h, &w.w_v, d, &mut v);
            cache.push_pinned(l, PinnedId::Generated(state.step as u32), &k, &v);
            let (out, snap) = {
                let (view, ids) = cache.view(l);
                let out = self.attend(&q, &view)?;
                let snap = (l == eval_layer).then(|| build_snapshot(state.step, l, &ids, &out.mean_scores));
                (out, snap)
            };
            if let Some(s) = snap {
                hook.on_snapshot(&s, cache)?;
                snapshot = Some(s);
            }
            self.finish_layer(l, &mut h, &out.output);
        }
        let token = self.next_token(&h);
        state.input = self.embedding(token).to_vec();
        state.token = token;
        state.step += 1;
        Ok(StepOutput {
            hidden: h,
            token,
            snapshot: snapshot.expect("eval layer is below the layer count"),
        })
    }
}

fn build_snapshot<T: Scalar>(step: usize, layer: usize, ids: &[TokenId], mean: &[T]) -> AttentionSnapshot {
    let mut pairs: Vec<(TokenId, f64)> = ids
        .iter()
        .copied()
        .zip(mean.iter().map(|s| s.to_f64_lossless()))
        .collect();
    if !pairs.windows(2).all(|w| w[0].0 < w[1].0) {
        pairs.sort_by_key(|p| p.0);
    }
    let other_mass = mean[ids.len()..].iter().map(|s| s.to_f64_lossless()).sum();
    AttentionSnapshot {
        step,
        layer,
        ids: pairs.iter().map(|p| p.0).collect(),
        scores: pairs.iter().map(|p| p.1).collect(),
        other_mass,
    }
}

/// One step of [`reference_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStep<T> {
    pub hidden: Vec<T>,
    pub token: u32,
}

/// Cache-free reference: every step recomputes the full sequence (prompt plus
/// everything generated so far) from scratch, without any pruning.
pub fn reference_decode<T: Scalar>(
    decoder: &Decoder<T>,
    visual_rows: &[T],
    text: &TextTokens<T>,
    steps: usize,
    mode: PrefillMode,
) -> Result<Vec<ReferenceStep<T>>, AttentionError> {
    let d = decoder.dims.hidden;
    let prompt: Vec<T> = visual_rows.iter().chain(text.data()).copied().collect();
    let prompt_len = prompt.len() / d;

    let last_hidden = |seq: &[T]| -> Result<Vec<T>, AttentionError> {
        let n = seq.len() / d;
        let mut x = seq.to_vec();
        for l in 0..decoder.dims.layers {
            let qkv = project_qkv(&x, d, decoder.layer_weights(l))?;
            let first_mixed = if mode == PrefillMode::Exact { 0 } else { prompt_len };
            for i in first_mixed..n {
                let view = KvView::single(d, &qkv.k[..(i + 1) * d], &qkv.v[..(i + 1) * d]);
                let out = decoder.attend(&qkv.q[i * d..(i + 1) * d], &view)?;
                decoder.finish_layer(l, &mut x[i * d..(i + 1) * d], &out.output);
            }
        }
        Ok(x[(n - 1) * d..].to_vec())
    };

    let mut seq = prompt.clone();
    let first = decoder.next_token(&last_hidden(&seq)?);
    seq.extend_from_slice(decoder.embedding(first));
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let hidden = last_hidden(&seq)?;
        let token = decoder.next_token(&hidden);
        seq.extend_from_slice(decoder.embedding(token));
        out.push(ReferenceStep { hidden, token });
    }
    Ok(out)
}
