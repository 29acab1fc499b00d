//! Stage 1: temporal merging of redundant visual tokens inside sliding windows
//! of frames.
//!
//! Each window is split into group O (frames at even offsets: 1st, 3rd, ...)
//! and group E (odd offsets: 2nd, 4th, ...). A group-E frame is compared
//! position-by-position with the O frame just before it; every later O frame
//! is compared with the window's first frame, which is always kept whole. In
//! each compared frame the `floor(k_rate * N_v)` most similar tokens are
//! dropped and represented by their counterpart.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::{dot, floor_count, Scalar};
use crate::tokenstream::{CompressionConfig, MergeMode, TokenId, VisualTokenGrid};

/// Norm below which a row counts as degenerate.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TtmError {
    #[error("token row has (near) zero norm")]
    ZeroNorm,
}

/// `a·b / (|a||b|)` clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T, TtmError> {
    debug_assert_eq!(a.len(), b.len());
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let min = T::from_f64_lossy(MIN_NORM);
    if na < min || nb < min {
        return Err(TtmError::ZeroNorm);
    }
    let s = dot(a, b) / (na * nb);
    Ok(s.max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub frames: Vec<usize>,
}

impl Window {
    /// Group O: frames at even offsets within the window.
    pub fn odd_group(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.iter().step_by(2).copied()
    }

    /// Group E: frames at odd offsets within the window.
    pub fn even_group(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.iter().skip(1).step_by(2).copied()
    }

    pub fn first(&self) -> usize {
        self.frames[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPartition {
    pub window_len: usize,
    pub windows: Vec<Window>,
}

/// Consecutive non-overlapping windows covering `0..frames`; the last one may be short.
///
/// Panics unless `frames >= 1` and `window_len` is even and at least 2.
pub fn partition_windows(frames: usize, window_len: usize) -> WindowPartition {
    assert!(frames >= 1, "at least one frame required");
    assert!(
        window_len >= 2 && window_len.is_multiple_of(2),
        "window_len must be even and >= 2"
    );
    let windows = (0..frames)
        .step_by(window_len)
        .map(|start| Window {
            frames: (start..frames.min(start + window_len)).collect(),
        })
        .collect();
    WindowPartition { window_len, windows }
}

/// One dropped token and the surviving token that now represents it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MergeRecord {
    pub removed: TokenId,
    pub kept_as: TokenId,
    /// Similarity to the counterpart it was compared with (0 for degenerate rows).
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtmResult<T> {
    /// Surviving ids, strictly increasing.
    pub ids: Vec<TokenId>,
    /// Surviving rows, `ids.len() × hidden_dim`, in `ids` order.
    pub rows: Vec<T>,
    pub hidden_dim: usize,
    /// Sorted by `removed`.
    pub records: Vec<MergeRecord>,
    pub total_tokens: usize,
    pub retained_ratio: f64,
}

impl<T: Scalar> TtmResult<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn removed_ids(&self) -> Vec<TokenId> {
        self.records.iter().map(|r| r.removed).collect()
    }

    /// Every token of the input grid kept unchanged.
    pub fn passthrough(grid: &VisualTokenGrid<T>) -> Self {
        Self {
            ids: grid.ids().collect(),
            rows: grid.data().to_vec(),
            hidden_dim: grid.hidden_dim(),
            records: Vec::new(),
            total_tokens: grid.len(),
            retained_ratio: 1.0,
        }
    }
}

/// Tokens dropped per compared frame.
pub fn frame_quota(k_rate: f64, tokens_per_frame: usize) -> usize {
    floor_count(k_rate * tokens_per_frame as f64).min(tokens_per_frame)
}

/// Closed-form survivor count of [`apply_ttm`] for a grid shape.
pub fn retained_count(frames: usize, tokens_per_frame: usize, window_len: usize, k_rate: f64) -> usize {
    let compared: usize = partition_windows(frames, window_len)
        .windows
        .iter()
        .map(|w| w.frames.len() - 1)
        .sum();
    frames * tokens_per_frame - compared * frame_quota(k_rate, tokens_per_frame)
}

pub fn apply_ttm<T: Scalar>(grid: &VisualTokenGrid<T>, config: &CompressionConfig) -> TtmResult<T> {
    let n = grid.tokens_per_frame();
    let quota = frame_quota(config.k_rate, n);
    let partition = partition_windows(grid.frames(), config.window_len);

    // merged_into[row] = (counterpart row, similarity)
    let mut merged_into: Vec<Option<(usize, f64)>> = vec![None; grid.len()];
    if quota > 0 {
        for window in &partition.windows {
            let first = window.first();
            let pairs = window.odd_group().skip(1).map(|f| (f, first)).chain(
                window
                    .frames
                    .iter()
                    .enumerate()
                    .filter(|(o, _)| o % 2 == 1)
                    .map(|(o, &f)| (f, window.frames[o - 1])),
            );
            for (frame, reference) in pairs {
                let mut scored: Vec<(f64, usize)> = (0..n)
                    .map(|p| {
                        let s = cosine_similarity(grid.row_at(frame * n + p), grid.row_at(reference * n + p))
                            .map(|s| s.to_f64_lossless())
                            .unwrap_or(0.0);
                        (s, p)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                for &(s, p) in &scored[..quota] {
                    merged_into[frame * n + p] = Some((reference * n + p, s));
                }
            }
        }
    }

    // A late O-frame counterpart may itself have been merged into the first frame.
    let resolve = |mut row: usize| {
        while let Some((next, _)) = merged_into[row] {
            row = next;
        }
        row
    };

    let mut records = Vec::new();
    let mut ids = Vec::new();
    let mut kept_rows = Vec::new();
    for (row, m) in merged_into.iter().enumerate() {
        match m {
            Some((_, s)) => records.push(MergeRecord {
                removed: TokenId::from_row(row, n),
                kept_as: TokenId::from_row(resolve(row), n),
                similarity: *s,
            }),
            None => {
                ids.push(TokenId::from_row(row, n));
                kept_rows.push(row);
            }
        }
    }

    let d = grid.hidden_dim();
    let mut rows = Vec::with_capacity(kept_rows.len() * d);
    for &r in &kept_rows {
        rows.extend_from_slice(grid.row_at(r));
    }
    if config.merge_mode == MergeMode::Mean && !records.is_empty() {
        let slot: std::collections::HashMap<usize, usize> =
            kept_rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut counts = vec![1usize; kept_rows.len()];
        for rec in &records {
            let i = slot[&rec.kept_as.row(n)];
            counts[i] += 1;
            let src = grid.row(rec.removed);
            for (acc, &v) in rows[i * d..(i + 1) * d].iter_mut().zip(src) {
                *acc += v;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            if c > 1 {
                let c = T::from_usize(c).expect("count fits");
                rows[i * d..(i + 1) * d].iter_mut().for_each(|v| *v /= c);
            }
        }
    }

    let total = grid.len();
    TtmResult {
        retained_ratio: ids.len() as f64 / total as f64,
        ids,
        rows,
        hidden_dim: d,
        records,
        total_tokens: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenstream::synth_grid_with;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 1.0]), Err(TtmError::ZeroNorm));
        // rounding can push |s| above 1 for parallel rows
        let a = [0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let s = cosine_similarity(&a, &a).unwrap();
        assert!(s <= 1.0);
    }

    #[test]
    fn partition_examples() {
        let p = partition_windows(32, 4);
        assert_eq!(p.windows.len(), 8);
        assert_eq!(p.windows[0].frames, vec![0, 1, 2, 3]);
        assert_eq!(p.windows[0].odd_group().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(p.windows[0].even_group().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(partition_windows(4, 4).windows.len(), 1);
        let p = partition_windows(6, 4);
        assert_eq!(p.windows[1].frames, vec![4, 5]);
        assert_eq!(p.windows[1].odd_group().collect::<Vec<_>>(), vec![4]);
        assert_eq!(p.windows[1].even_group().collect::<Vec<_>>(), vec![5]);
    }

    #[test]
    fn partition_covers_every_frame_once() {
        for frames in 1..=20 {
            for window_len in [2, 4, 6, 8] {
                let p = partition_windows(frames, window_len);
                assert_eq!(p.windows.len(), frames.div_ceil(window_len));
                let flat: Vec<usize> = p.windows.iter().flat_map(|w| w.frames.clone()).collect();
                assert_eq!(flat, (0..frames).collect::<Vec<_>>());
                for w in &p.windows {
                    let mut groups: Vec<usize> = w.odd_group().chain(w.even_group()).collect();
                    groups.sort_unstable();
                    assert_eq!(groups, w.frames);
                }
            }
        }
    }

    #[test]
    fn k_zero_is_a_no_op() {
        let g = synth_grid_with::<f64>(1, 8, 5, 3, 0.1);
        let c = CompressionConfig {
            k_rate: 0.0,
            ..Default::default()
        };
        let r = apply_ttm(&g, &c);
        assert_eq!(r.retained_ratio, 1.0);
        assert!(r.records.is_empty());
        assert_eq!(r.rows, g.data());
    }

    #[test]
    fn identical_frames_remove_lowest_positions() {
        let g = synth_grid_with::<f64>(5, 4, 4, 6, 0.0);
        let c = CompressionConfig {
            k_rate: 0.5,
            ..Default::default()
        };
        let r = apply_ttm(&g, &c);
        let removed = r.removed_ids();
        let expected: Vec<TokenId> = (1..4).flat_map(|f| (0..2).map(move |p| TokenId::new(f, p))).collect();
        assert_eq!(removed, expected);
        for rec in &r.records {
            assert!((rec.similarity - 1.0).abs() < 1e-12);
            assert_eq!(rec.kept_as, TokenId::new(0, rec.removed.position as usize));
        }
    }

    #[test]
    fn ratio_law_on_full_windows() {
        let g = synth_grid_with::<f32>(2, 32, 20, 4, 0.3);
        for (k, want) in [(0.3, 0.775), (0.5, 0.625), (0.7, 0.475), (0.9, 0.325)] {
            let c = CompressionConfig {
                k_rate: k,
                ..Default::default()
            };
            let r = apply_ttm(&g, &c);
            assert_eq!(r.len(), retained_count(32, 20, 4, k));
            assert!((r.retained_ratio - want).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn kept_as_always_survives() {
        let g = synth_grid_with::<f64>(9, 7, 6, 5, 0.4);
        let c = CompressionConfig {
            k_rate: 0.8,
            ..Default::default()
        };
        let r = apply_ttm(&g, &c);
        for rec in &r.records {
            assert_ne!(rec.removed, rec.kept_as);
            assert!(r.ids.binary_search(&rec.kept_as).is_ok());
        }
        assert!(r.ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.ids.len() + r.records.len(), g.len());
    }

    #[test]
    fn zero_rows_score_zero() {
        // frame 1 is all zeros, frame 0 random: every similarity is 0, so ties go to low positions
        let mut data = synth_grid_with::<f64>(3, 1, 4, 3, 0.0).data().to_vec();
        data.extend(std::iter::repeat_n(0.0, 12));
        let g = VisualTokenGrid::new(2, 4, 3, data).unwrap();
        let c = CompressionConfig {
            k_rate: 0.5,
            ..Default::default()
        };
        let r = apply_ttm(&g, &c);
        assert_eq!(r.removed_ids(), vec![TokenId::new(1, 0), TokenId::new(1, 1)]);
        assert!(r.records.iter().all(|rec| rec.similarity == 0.0));
    }

    #[test]
    fn mean_mode_averages_into_kept_token() {
        let data = vec![1.0f64, 0.0, 3.0, 0.0];
        let g = VisualTokenGrid::new(2, 1, 2, data).unwrap();
        let c = CompressionConfig {
            k_rate: 1.0,
            merge_mode: MergeMode::Mean,
            ..Default::default()
        };
        let r = apply_ttm(&g, &c);
        assert_eq!(r.ids, vec![TokenId::new(0, 0)]);
        assert_eq!(r.rows, vec![2.0, 0.0]);
    }
}
