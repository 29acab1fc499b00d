use proptest::prelude::*;

use super::*;

fn ids(n: usize) -> Vec<TokenId> {
    (0..n).map(|p| TokenId::new(0, p)).collect()
}

fn config(p_rate: f64) -> CompressionConfig {
    CompressionConfig {
        p_rate,
        eval_layer: 0,
        ..Default::default()
    }
}

/// Three layers, width 2; row of token `p` in layer `l` is `[p, l]` / `[-p, l]`.
fn cache(n: usize, p_rate: f64) -> DualCache<f64> {
    let mut c = DualCache::new(3, 2, ids(n), 0, p_rate).unwrap();
    for l in 0..3 {
        for id in ids(n) {
            let p = f64::from(id.position);
            c.push_visual(l, id, &[p, l as f64], &[-p, l as f64]);
        }
        c.push_pinned(l, PinnedId::Text(0), &[9.0, 9.0], &[9.0, 9.0]);
    }
    c.seal();
    c
}

fn snapshot(step: usize, scores: &[f64]) -> AttentionSnapshot {
    AttentionSnapshot {
        step,
        layer: 0,
        ids: ids(scores.len()),
        scores: scores.to_vec(),
        other_mass: 0.0,
    }
}

fn positions(v: &[TokenId]) -> Vec<u32> {
    v.iter().map(|t| t.position).collect()
}

#[test]
fn initial_prune_keeps_top_scores() {
    let mut c = cache(6, 0.7);
    assert_eq!(c.quota(), 2);
    let d = initial_prune(&snapshot(0, &[0.5, 0.3, 0.1, 0.05, 0.03, 0.02]), &mut c, &config(0.7)).unwrap();
    assert_eq!(positions(&d.retained_ids), vec![0, 1]);
    assert_eq!(d.threshold, Some(0.3));
    assert_eq!(positions(&d.evicted), vec![2, 3, 4, 5]);
    assert!(d.readmitted.is_empty());
    assert_eq!(c.active_visual_rows(0), 6);
    for l in 1..3 {
        assert_eq!(c.active_visual_rows(l), 2);
        assert_eq!(c.parked_rows(l), 4);
    }
    c.check_invariants().unwrap();
    assert_eq!(c.audit_log().len(), 1);
}

#[test]
fn zero_rate_keeps_everything() {
    let mut c = cache(5, 0.0);
    let d = initial_prune(&snapshot(0, &[0.1, 0.2, 0.3, 0.2, 0.1]), &mut c, &config(0.0)).unwrap();
    assert_eq!(d.retained_ids, ids(5));
    assert!(d.evicted.is_empty());
    assert_eq!(c.parked_bytes(), 0);
    c.check_invariants().unwrap();
}

#[test]
fn ties_prefer_low_ids() {
    let (retained, tau) = top_quota(&ids(6), &[0.25; 6], 3);
    assert_eq!(positions(&retained), vec![0, 1, 2]);
    assert_eq!(tau, Some(0.25));
}

#[test]
fn swap_is_stable_on_identical_snapshots() {
    let mut c = cache(6, 0.5);
    let s = snapshot(0, &[0.4, 0.1, 0.2, 0.1, 0.15, 0.05]);
    initial_prune(&s, &mut c, &config(0.5)).unwrap();
    c.set_step(1);
    let d = dynamic_swap(&s, &mut c, &config(0.5)).unwrap();
    assert!(d.readmitted.is_empty() && d.evicted.is_empty());
    assert_eq!(d.churn(), 0);
}

#[test]
fn swap_readmits_and_evicts() {
    let mut c = cache(6, 0.7);
    initial_prune(&snapshot(0, &[0.5, 0.3, 0.1, 0.05, 0.03, 0.02]), &mut c, &config(0.7)).unwrap();
    c.set_step(1);
    let d = dynamic_swap(&snapshot(1, &[0.1, 0.3, 0.05, 0.02, 0.5, 0.03]), &mut c, &config(0.7)).unwrap();
    assert_eq!(positions(&d.retained_ids), vec![1, 4]);
    assert_eq!(positions(&d.readmitted), vec![4]);
    assert_eq!(positions(&d.evicted), vec![0]);
    // readmitted rows come back untouched
    for l in 1..3 {
        let block = &c.layer(l).active;
        let i = block.ids().iter().position(|t| t.position == 4).unwrap();
        assert_eq!(block.key_row(i), &[4.0, l as f64]);
        assert_eq!(block.value_row(i), &[-4.0, l as f64]);
    }
    c.check_invariants().unwrap();
}

#[test]
fn one_shot_freezes_the_set() {
    let first = [0.5, 0.3, 0.1, 0.05, 0.03, 0.02];
    let mut a = cache(6, 0.7);
    let mut b = cache(6, 0.7);
    let da = initial_prune(&snapshot(0, &first), &mut a, &config(0.7)).unwrap();
    let db = one_shot_prune(&snapshot(0, &first), &mut b, &config(0.7)).unwrap();
    assert_eq!(da, db);
    assert_eq!(b.parked_rows(1), 0);
    assert_eq!(b.discarded().len(), 4);
    b.set_step(1);
    let later = dynamic_swap(&snapshot(1, &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5]), &mut b, &config(0.7)).unwrap();
    assert_eq!(later.retained_ids, da.retained_ids);
    assert_eq!(later.churn(), 0);
    b.check_invariants().unwrap();
}

#[test]
fn random_prune_is_seeded() {
    let mut a = cache(20, 0.6);
    let mut b = cache(20, 0.6);
    let da = random_prune(&mut a, &config(0.6), 42).unwrap();
    let db = random_prune(&mut b, &config(0.6), 42).unwrap();
    assert_eq!(da.retained_ids, db.retained_ids);
    assert_eq!(da.retained_ids.len(), 8);
    assert_eq!(da.threshold, None);
    a.check_invariants().unwrap();

    let mut full = cache(7, 0.0);
    assert_eq!(random_prune(&mut full, &config(0.0), 1).unwrap().retained_ids, ids(7));
}

#[test]
fn random_prune_is_uniform() {
    let (population, trials) = (12usize, 10_000u64);
    let mut hits = vec![0u64; population];
    let mut quota = 0;
    for seed in 0..trials {
        let mut c = DualCache::<f64>::ids_only(2, ids(population), 0, 0.75).unwrap();
        quota = c.quota();
        for id in random_prune(&mut c, &config(0.75), seed).unwrap().retained_ids {
            hits[id.position as usize] += 1;
        }
    }
    let p = quota as f64 / population as f64;
    let mean = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        assert!(
            (h as f64 - mean).abs() <= 3.0 * sigma,
            "token {i}: {h} vs {mean} ± {}",
            3.0 * sigma
        );
    }
}

#[test]
fn error_paths() {
    assert_eq!(
        DualCache::<f64>::new(2, 1, ids(4), 0, -0.5).unwrap_err(),
        KvError::QuotaExceedsPopulation {
            quota: 6,
            population: 4
        }
    );
    let mut c = cache(4, 0.5);
    assert!(matches!(
        initial_prune(&snapshot(0, &[0.1, 0.2, 0.3]), &mut c, &config(0.5)),
        Err(KvError::SnapshotMismatch { expected: 4, found: 3 })
    ));
    let wrong_layer = CompressionConfig {
        eval_layer: 1,
        ..config(0.5)
    };
    assert!(matches!(
        initial_prune(&snapshot(0, &[0.1; 4]), &mut c, &wrong_layer),
        Err(KvError::EvalLayerMismatch { config: 1, cache: 0 })
    ));
    let ghost = TokenId::new(3, 3);
    assert_eq!(
        c.apply_retention(&[TokenId::new(0, 0), ghost], false),
        Err(KvError::MissingParkedRow { layer: 1, id: ghost })
    );
}

#[test]
fn invariant_checker_catches_tampering() {
    let mut c = cache(4, 0.5);
    initial_prune(&snapshot(0, &[0.4, 0.3, 0.2, 0.1]), &mut c, &config(0.5)).unwrap();
    c.check_invariants().unwrap();
    let mut broken = c.clone();
    broken.push_visual(2, TokenId::new(9, 9), &[0.0, 0.0], &[0.0, 0.0]);
    assert_eq!(broken.check_invariants().unwrap_err().check, "partition");
}

#[test]
fn jaccard_basics() {
    assert_eq!(jaccard(&ids(3), &ids(3)), 1.0);
    assert_eq!(jaccard(&ids(2), &ids(4)), 0.5);
    assert_eq!(jaccard(&[], &[]), 1.0);
    assert_eq!(jaccard(&ids(1), &[TokenId::new(1, 0)]), 0.0);
}

#[test]
fn audit_log_is_json_lines() {
    let mut c = cache(4, 0.5);
    initial_prune(&snapshot(0, &[0.4, 0.3, 0.2, 0.1]), &mut c, &config(0.5)).unwrap();
    let mut out = Vec::new();
    write_audit_jsonl(&mut out, c.audit_log()).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["step"], 0);
    assert_eq!(v["threshold"], 0.3);
    assert_eq!(v["evicted"].as_array().unwrap().len(), 2);
}

proptest! {
    #[test]
    fn selection_is_scale_invariant(
        scores in proptest::collection::vec(0.0f64..1.0, 1..40),
        c in 1e-3f64..1e3,
        p_rate in 0.0f64..1.0,
    ) {
        let quota = retention_quota(scores.len(), p_rate);
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let (a, _) = top_quota(&ids(scores.len()), &scores, quota);
        let (b, _) = top_quota(&ids(scores.len()), &scaled, quota);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn quota_and_partition_hold_over_swaps(
        steps in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 10), 1..12),
        p_rate in 0.0f64..1.0,
    ) {
        let mut c = cache(10, p_rate);
        let cfg = config(p_rate);
        for (t, s) in steps.iter().enumerate() {
            c.set_step(t);
            let d = if t == 0 {
                initial_prune(&snapshot(t, s), &mut c, &cfg).unwrap()
            } else {
                dynamic_swap(&snapshot(t, s), &mut c, &cfg).unwrap()
            };
            prop_assert_eq!(d.retained_ids.len(), retention_quota(10, p_rate));
            prop_assert!(c.check_invariants().is_ok());
        }
    }
}
