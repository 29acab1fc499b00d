use num_bigint::BigUint;

use vtc_core::attention_sim::{ModelDims, ModelPreset};
use vtc_core::costmodel::{cost_report, decode_flops, flops_ratio, prefill_flops, total_flops, CostInputs};
use vtc_core::tokenstream::CompressionConfig;

/// Per-term oracle: prefill summed token by token, decode summed step by step.
fn oracle_total(dims: &ModelDims, n: u64, active_n: u64, steps: u64) -> BigUint {
    let (d, m, t) = (
        BigUint::from(dims.hidden),
        BigUint::from(dims.ffn_inner),
        BigUint::from(dims.layers),
    );
    let n_big = BigUint::from(n);
    let mut prefill = BigUint::from(0u32);
    for _ in 0..n {
        prefill += BigUint::from(4u32) * &d * &d + BigUint::from(2u32) * &n_big * &d + BigUint::from(2u32) * &d * &m;
    }
    let mut decode = BigUint::from(0u32);
    for i in 1..=steps {
        decode += BigUint::from(4u32) * &d * &d + BigUint::from(2u32) * &d * &m;
        decode += BigUint::from(2u32) * &d * BigUint::from(active_n + i);
    }
    t * (prefill + decode)
}

#[test]
fn closed_form_matches_per_term_oracle() {
    let cases = [
        (ModelDims::new(1, 1, 1, 1).unwrap(), 1, 0, 1),
        (ModelDims::new(3, 8, 20, 2).unwrap(), 17, 5, 9),
        (ModelDims::preset(ModelPreset::Small), 6272, 6272, 100),
        (ModelDims::preset(ModelPreset::Medium), 2984, 896, 100),
        (ModelDims::preset(ModelPreset::Large), 6272, 6272, 100),
    ];
    for (dims, n, active_n, steps) in cases {
        let inputs = CostInputs {
            dims,
            n,
            steps,
            active_n,
        };
        let got = total_flops(&inputs).unwrap();
        assert_eq!(BigUint::from(got), oracle_total(&dims, n, active_n, steps));
    }
}

#[test]
fn seven_b_prefill_magnitude() {
    let inputs = CostInputs {
        dims: ModelDims::preset(ModelPreset::Medium),
        n: 6272,
        steps: 100,
        active_n: 6272,
    };
    let prefill = prefill_flops(&inputs).unwrap() as f64;
    assert!((prefill / 4.077e13 - 1.0).abs() < 1e-3, "{prefill}");
    let decode = decode_flops(&inputs).unwrap() as f64;
    assert!((decode / 6.5e11 - 1.0).abs() < 0.05, "{decode}");
}

#[test]
fn decode_grows_with_active_tokens() {
    let dims = ModelDims::preset(ModelPreset::Medium);
    let at = |active_n| {
        decode_flops(&CostInputs {
            dims,
            n: 1,
            steps: 100,
            active_n,
        })
        .unwrap()
    };
    assert!(at(894) < at(6272));
}

#[test]
fn ratio_is_monotone_in_both_rates() {
    let dims = ModelDims::preset(ModelPreset::Medium);
    let rates: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let ratio = |k, p| {
        let c = CompressionConfig {
            k_rate: k,
            p_rate: p,
            ..Default::default()
        };
        flops_ratio(&c, &dims, 6272, 0, 100).unwrap()
    };
    for &k in &rates {
        for w in rates.windows(2) {
            assert!(ratio(k, w[1]) <= ratio(k, w[0]));
            assert!(ratio(w[1], k) <= ratio(w[0], k));
        }
    }
}

#[test]
fn report_is_internally_consistent() {
    let c = CompressionConfig {
        k_rate: 0.7,
        p_rate: 0.7,
        ..Default::default()
    };
    let r = cost_report(&c, &ModelDims::preset(ModelPreset::Medium), 32, 196, 0, 100).unwrap();
    assert_eq!(r.total_flops, r.prefill_flops + r.decode_flops);
    assert_eq!(r.visual_tokens_full, 6272);
    assert_eq!(r.visual_tokens_stage1, 6272 - 24 * 137);
    assert_eq!(r.visual_tokens_final, 896);
    assert!(r.flops_ratio_vs_full > 0.0 && r.flops_ratio_vs_full < 1.0);
}
