use thiserror::Error;

use super::weights::LayerWeights;
use crate::scalar::{vec_mat, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("dimension mismatch: expected width {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("attention over an empty key set")]
    EmptyKeySet,
}

/// Query, key and value rows for `rows` tokens, each `rows × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv<T> {
    pub rows: usize,
    pub width: usize,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
}

/// `H W_Q`, `H W_K`, `H W_V` for a flat row-major `hidden` of the given width.
pub fn project_qkv<T: Scalar>(hidden: &[T], width: usize, weights: &LayerWeights<T>) -> Result<Qkv<T>, AttentionError> {
    let d = weights.hidden;
    if width != d {
        return Err(AttentionError::DimensionMismatch {
            expected: d,
            found: width,
        });
    }
    if !hidden.len().is_multiple_of(d) {
        return Err(AttentionError::DimensionMismatch {
            expected: d,
            found: hidden.len() % d,
        });
    }
    let rows = hidden.len() / d;
    let mut q = vec![T::zero(); rows * d];
    let mut k = vec![T::zero(); rows * d];
    let mut v = vec![T::zero(); rows * d];
    for (i, h) in hidden.chunks_exact(d).enumerate() {
        let span = i * d..(i + 1) * d;
        vec_mat(h, &weights.w_q, d, &mut q[span.clone()]);
        vec_mat(h, &weights.w_k, d, &mut k[span.clone()]);
        vec_mat(h, &weights.w_v, d, &mut v[span]);
    }
    Ok(Qkv {
        rows,
        width: d,
        q,
        k,
        v,
    })
}

/// Max-shifted softmax.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Keys and values as a concatenation of flat row-major segments.
#[derive(Debug, Clone)]
pub struct KvView<'a, T> {
    pub width: usize,
    keys: Vec<&'a [T]>,
    values: Vec<&'a [T]>,
}

impl<'a, T: Scalar> KvView<'a, T> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn single(width: usize, keys: &'a [T], values: &'a [T]) -> Self {
        let mut v = Self::new(width);
        v.push(keys, values);
        v
    }

    pub fn push(&mut self, keys: &'a [T], values: &'a [T]) {
        debug_assert_eq!(keys.len(), values.len());
        debug_assert_eq!(keys.len() % self.width.max(1), 0);
        if !keys.is_empty() {
            self.keys.push(keys);
            self.values.push(values);
        }
    }

    pub fn len(&self) -> usize {
        self.keys.iter().map(|s| s.len() / self.width).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_rows(&self) -> impl Iterator<Item = &'a [T]> + '_ {
        let w = self.width;
        self.keys.iter().flat_map(move |s| s.chunks_exact(w))
    }

    pub fn value_rows(&self) -> impl Iterator<Item = &'a [T]> + '_ {
        let w = self.width;
        self.values.iter().flat_map(move |s| s.chunks_exact(w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    /// Per-head outputs concatenated, length `width`.
    pub output: Vec<T>,
    /// `heads × keys` softmax rows, head-major.
    pub head_scores: Vec<T>,
    /// Head-averaged row, one entry per key.
    pub mean_scores: Vec<T>,
}

impl<T: Scalar> AttentionOutput<T> {
    pub fn head_row(&self, head: usize) -> &[T] {
        let n = self.mean_scores.len();
        &self.head_scores[head * n..(head + 1) * n]
    }
}

/// One query row against every key: per head `softmax(q·kᵀ / scale)` and `scores·V`.
///
/// `scale_dim` is the dimension whose square root divides the logits.
pub fn attention_row<T: Scalar>(
    query: &[T],
    kv: &KvView<'_, T>,
    heads: usize,
    scale_dim: usize,
) -> Result<AttentionOutput<T>, AttentionError> {
    let width = kv.width;
    if query.len() != width {
        return Err(AttentionError::DimensionMismatch {
            expected: width,
            found: query.len(),
        });
    }
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(AttentionError::DimensionMismatch {
            expected: width,
            found: heads,
        });
    }
    let n = kv.len();
    if n == 0 {
        return Err(AttentionError::EmptyKeySet);
    }
    let hd = width / heads;
    let inv_scale = T::one() / T::from_usize(scale_dim).expect("dim fits").sqrt();

    let mut scores = vec![T::zero(); heads * n];
    for (j, key) in kv.key_rows().enumerate() {
        for h in 0..heads {
            let span = h * hd..(h + 1) * hd;
            let logit = query[span.clone()]
                .iter()
                .zip(&key[span])
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            scores[h * n + j] = logit * inv_scale;
        }
    }
    for row in scores.chunks_exact_mut(n) {
        softmax_in_place(row);
    }

    let mut output = vec![T::zero(); width];
    for (j, value) in kv.value_rows().enumerate() {
        for h in 0..heads {
            let p = scores[h * n + j];
            let span = h * hd..(h + 1) * hd;
            for (o, &v) in output[span.clone()].iter_mut().zip(&value[span]) {
                *o += p * v;
            }
        }
    }

    let heads_t = T::from_usize(heads).expect("heads fits");
    let mean_scores = (0..n)
        .map(|j| (0..heads).map(|h| scores[h * n + j]).sum::<T>() / heads_t)
        .collect();
    Ok(AttentionOutput {
        output,
        head_scores: scores,
        mean_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention_sim::ModelDims;

    #[test]
    fn identity_weights_reproduce_input() {
        let dims = ModelDims::new(1, 3, 2, 1).unwrap();
        let w = LayerWeights::<f64>::identity(&dims);
        let h = [1.0, -2.0, 0.5];
        let qkv = project_qkv(&h, 3, &w).unwrap();
        assert_eq!(qkv.q, h);
        assert_eq!(qkv.k, h);
        let zero = project_qkv(&[0.0; 6], 3, &LayerWeights::<f64>::generate(&dims, 1, 0)).unwrap();
        assert!(zero.q.iter().chain(&zero.k).chain(&zero.v).all(|&v| v == 0.0));
        assert_eq!(
            project_qkv(&[0.0; 4], 4, &w),
            Err(AttentionError::DimensionMismatch { expected: 3, found: 4 })
        );
    }

    #[test]
    fn single_and_duplicate_keys() {
        let k = [0.3f64, -0.2];
        let v = [5.0, 7.0];
        let out = attention_row(&[1.0, 1.0], &KvView::single(2, &k, &v), 1, 2).unwrap();
        assert_eq!(out.mean_scores, vec![1.0]);
        assert_eq!(out.output, v.to_vec());

        let keys = [0.3f64, -0.2, 0.3, -0.2];
        let vals = [1.0, 0.0, 3.0, 2.0];
        let out = attention_row(&[0.4, 2.0], &KvView::single(2, &keys, &vals), 2, 1).unwrap();
        for h in 0..2 {
            assert_eq!(out.head_row(h), &[0.5, 0.5]);
        }
        assert_eq!(out.output, vec![2.0, 1.0]);
    }

    #[test]
    fn empty_key_set_is_an_error() {
        let view = KvView::<f32>::new(4);
        assert_eq!(attention_row(&[0.0; 4], &view, 2, 2), Err(AttentionError::EmptyKeySet));
    }

    #[test]
    fn segments_concatenate() {
        let a = [1.0f64, 0.0, 0.0, 1.0];
        let b = [0.5f64, 0.5];
        let mut view = KvView::new(2);
        view.push(&a, &a);
        view.push(&b, &b);
        view.push(&[], &[]);
        assert_eq!(view.len(), 3);
        let flat: Vec<f64> = view.key_rows().flatten().copied().collect();
        assert_eq!(flat, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let both = [1.0f64, 0.0, 0.0, 1.0, 0.5, 0.5];
        let joined = attention_row(&[0.2, 0.9], &KvView::single(2, &both, &both), 1, 2).unwrap();
        let split = attention_row(&[0.2, 0.9], &view, 1, 2).unwrap();
        assert_eq!(joined, split);
    }
}
