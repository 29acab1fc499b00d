//! Analytic FLOPs accounting for prefill and decode, plus retained-token ratios.
//!
//! Per layer, prefill over `n` tokens costs `4nd² + 2n²d + 2ndm`; generating
//! `R` tokens against a cache of `n` costs `R(4d² + 2dm) + 2·Σᵢ d(n + i)`.

use num_traits::{FromPrimitive, Num};
use serde::Serialize;
use thiserror::Error;

use crate::attention_sim::ModelDims;
use crate::dyn_kv::retention_quota;
use crate::scalar::ceil_count;
use crate::tokenstream::CompressionConfig;
use crate::ttm::retained_count;

/// Default number of decoded tokens.
pub const DEFAULT_STEPS: u64 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("FLOPs count overflows 128 bits")]
    Overflow,
    #[error("invalid cost inputs: {0}")]
    InvalidInputs(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostInputs {
    pub dims: ModelDims,
    /// Prompt tokens at prefill (retained visual + text).
    pub n: u64,
    /// Decoded tokens.
    pub steps: u64,
    /// Tokens attended from the cache during decode.
    pub active_n: u64,
}

fn mul(terms: &[u128]) -> Result<u128, CostError> {
    terms
        .iter()
        .try_fold(1u128, |acc, &t| acc.checked_mul(t))
        .ok_or(CostError::Overflow)
}

fn add(terms: &[u128]) -> Result<u128, CostError> {
    terms
        .iter()
        .try_fold(0u128, |acc, &t| acc.checked_add(t))
        .ok_or(CostError::Overflow)
}

/// `T · (4nd² + 2n²d + 2ndm)`
pub fn prefill_flops(inputs: &CostInputs) -> Result<u128, CostError> {
    if inputs.n == 0 {
        return Err(CostError::InvalidInputs("n must be >= 1"));
    }
    let (n, d, m, t) = (
        u128::from(inputs.n),
        inputs.dims.hidden as u128,
        inputs.dims.ffn_inner as u128,
        inputs.dims.layers as u128,
    );
    let per_layer = add(&[mul(&[4, n, d, d])?, mul(&[2, n, n, d])?, mul(&[2, n, d, m])?])?;
    mul(&[t, per_layer])
}

/// `T · [R(4d² + 2dm) + 2(d·n·R + d·R(R+1)/2)]` with `n = active_n`.
pub fn decode_flops(inputs: &CostInputs) -> Result<u128, CostError> {
    if inputs.steps == 0 {
        return Err(CostError::InvalidInputs("steps must be >= 1"));
    }
    let (r, a, d, m, t) = (
        u128::from(inputs.steps),
        u128::from(inputs.active_n),
        inputs.dims.hidden as u128,
        inputs.dims.ffn_inner as u128,
        inputs.dims.layers as u128,
    );
    let dense = mul(&[r, add(&[mul(&[4, d, d])?, mul(&[2, d, m])?])?])?;
    // R(R+1) is always even
    let kv = add(&[mul(&[d, a, r])?, mul(&[d, r, r + 1])? / 2])?;
    mul(&[t, add(&[dense, mul(&[2, kv])?])?])
}

pub fn total_flops(inputs: &CostInputs) -> Result<u128, CostError> {
    add(&[prefill_flops(inputs)?, decode_flops(inputs)?])
}

/// `(1 - 0.75·k, (1 - 0.75·k)(1 - p))` for full windows of four frames.
///
/// Generic so exact rationals reproduce table values without rounding.
pub fn retained_ratio<S: Num + Copy + FromPrimitive>(k_rate: S, p_rate: S) -> (S, S) {
    let three_quarters = S::from_u8(3).expect("3") / S::from_u8(4).expect("4");
    let stage1 = S::one() - three_quarters * k_rate;
    (stage1, stage1 * (S::one() - p_rate))
}

/// Rounds to `digits` significant digits.
pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

pub fn to_tflops(flops: u128) -> f64 {
    round_significant(flops as f64 / 1e12, 3)
}

/// Compressed ÷ full total FLOPs for `n_full` visual tokens, with stage-1 and
/// final visual counts taken from the idealized retained ratios.
pub fn flops_ratio(
    config: &CompressionConfig,
    dims: &ModelDims,
    n_full: u64,
    n_text: u64,
    steps: u64,
) -> Result<f64, CostError> {
    let (stage1, _) = retained_ratio(config.k_rate, config.p_rate);
    let stage1_tokens = (stage1 * n_full as f64).round() as u64;
    let final_tokens = ceil_count((1.0 - config.p_rate) * stage1_tokens as f64) as u64;
    ratio_for_counts(dims, n_full, stage1_tokens, final_tokens, n_text, steps)
}

fn ratio_for_counts(
    dims: &ModelDims,
    n_full: u64,
    stage1: u64,
    final_: u64,
    n_text: u64,
    steps: u64,
) -> Result<f64, CostError> {
    let full = total_flops(&CostInputs {
        dims: *dims,
        n: n_full + n_text,
        steps,
        active_n: n_full + n_text,
    })?;
    let compressed = total_flops(&CostInputs {
        dims: *dims,
        n: stage1 + n_text,
        steps,
        active_n: final_ + n_text,
    })?;
    Ok(compressed as f64 / full as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub prefill_flops: u128,
    pub decode_flops: u128,
    pub total_flops: u128,
    pub full_total_flops: u128,
    pub prefill_tflops: f64,
    pub decode_tflops: f64,
    pub total_tflops: f64,
    pub full_total_tflops: f64,
    pub retained_ratio_stage1: f64,
    pub retained_ratio_final: f64,
    pub flops_ratio_vs_full: f64,
    pub visual_tokens_full: u64,
    pub visual_tokens_stage1: u64,
    pub visual_tokens_final: u64,
    pub text_tokens: u64,
    pub steps: u64,
}

/// Full report for a `frames × tokens_per_frame` video: token counts follow
/// the exact per-frame merging quota and the ceiling retention quota.
pub fn cost_report(
    config: &CompressionConfig,
    dims: &ModelDims,
    frames: usize,
    tokens_per_frame: usize,
    text_tokens: u64,
    steps: u64,
) -> Result<CostReport, CostError> {
    if frames == 0 || tokens_per_frame == 0 {
        return Err(CostError::InvalidInputs("frames and tokens per frame must be >= 1"));
    }
    let full = (frames * tokens_per_frame) as u64;
    let stage1 = retained_count(frames, tokens_per_frame, config.window_len, config.k_rate) as u64;
    let final_ = retention_quota(stage1 as usize, config.p_rate) as u64;
    let compressed = CostInputs {
        dims: *dims,
        n: stage1 + text_tokens,
        steps,
        active_n: final_ + text_tokens,
    };
    let full_inputs = CostInputs {
        dims: *dims,
        n: full + text_tokens,
        steps,
        active_n: full + text_tokens,
    };
    let prefill = prefill_flops(&compressed)?;
    let decode = decode_flops(&compressed)?;
    let total = add(&[prefill, decode])?;
    let full_total = total_flops(&full_inputs)?;
    let (r1, r2) = retained_ratio(config.k_rate, config.p_rate);
    Ok(CostReport {
        prefill_flops: prefill,
        decode_flops: decode,
        total_flops: total,
        full_total_flops: full_total,
        prefill_tflops: to_tflops(prefill),
        decode_tflops: to_tflops(decode),
        total_tflops: to_tflops(total),
        full_total_tflops: to_tflops(full_total),
        retained_ratio_stage1: r1,
        retained_ratio_final: r2,
        flops_ratio_vs_full: total as f64 / full_total as f64,
        visual_tokens_full: full,
        visual_tokens_stage1: stage1,
        visual_tokens_final: final_,
        text_tokens,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn unit(n: u64, steps: u64, active_n: u64) -> CostInputs {
        CostInputs {
            dims: ModelDims::new(1, 1, 1, 1).unwrap(),
            n,
            steps,
            active_n,
        }
    }

    #[test]
    fn unit_cases() {
        assert_eq!(prefill_flops(&unit(1, 1, 0)), Ok(8));
        assert_eq!(decode_flops(&unit(1, 1, 0)), Ok(8));
        assert_eq!(
            prefill_flops(&unit(0, 1, 0)),
            Err(CostError::InvalidInputs("n must be >= 1"))
        );
    }

    #[test]
    fn overflow_is_reported() {
        let inputs = CostInputs {
            dims: ModelDims::new(usize::MAX, usize::MAX, usize::MAX, 1).unwrap(),
            n: u64::MAX,
            steps: 1,
            active_n: 1,
        };
        assert_eq!(prefill_flops(&inputs), Err(CostError::Overflow));
    }

    #[test]
    fn prefill_is_superlinear() {
        let mut i = unit(1000, 1, 0);
        i.dims = ModelDims::new(2, 16, 32, 2).unwrap();
        let a = prefill_flops(&i).unwrap();
        i.n = 2000;
        assert!(prefill_flops(&i).unwrap() > 2 * a);
    }

    #[test]
    fn exact_rational_ratios() {
        let r = |n: i64, d: i64| Ratio::new(n, d);
        assert_eq!(retained_ratio(r(7, 10), r(7, 10)), (r(19, 40), r(57, 400)));
        assert_eq!(retained_ratio(r(0, 1), r(0, 1)), (r(1, 1), r(1, 1)));
        let (_, f) = retained_ratio(0.5f64, 0.7);
        assert!((f - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(round_significant(41.416454, 3), 41.4);
        assert_eq!(round_significant(436.1766, 3), 436.0);
        assert_eq!(round_significant(3.543, 3), 3.54);
    }

    #[test]
    fn no_compression_ratio_is_one() {
        let dims = ModelDims::new(4, 64, 128, 4).unwrap();
        let ratio = flops_ratio(&CompressionConfig::disabled(), &dims, 6272, 0, 100).unwrap();
        assert_eq!(ratio, 1.0);
    }
}
