use proptest::prelude::*;

use vtc_core::tokenstream::{CompressionConfig, TokenId, VisualTokenGrid};
use vtc_core::ttm::apply_ttm;

/// Exhaustive reference: score every compared token against its counterpart
/// with a naive cosine, sort each frame's pairs, drop the top quota.
fn oracle_removed(grid: &VisualTokenGrid<f64>, k_rate: f64, window_len: usize) -> Vec<TokenId> {
    let (frames, n) = (grid.frames(), grid.tokens_per_frame());
    let quota = ((k_rate * n as f64) + 1e-9).floor() as usize;
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            0.0
        } else {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    };
    let mut removed = Vec::new();
    for f in 0..frames {
        let offset = f % window_len;
        if offset == 0 {
            continue;
        }
        let reference = if offset % 2 == 1 { f - 1 } else { f - offset };
        let mut pairs: Vec<(f64, usize)> = (0..n)
            .map(|p| (cos(grid.row_at(f * n + p), grid.row_at(reference * n + p)), p))
            .collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        removed.extend(pairs.iter().take(quota).map(|&(_, p)| TokenId::new(f, p)));
    }
    removed.sort();
    removed
}

fn grid_strategy() -> impl Strategy<Value = VisualTokenGrid<f64>> {
    (1usize..=6, 1usize..=8, 1usize..=16).prop_flat_map(|(f, n, d)| {
        proptest::collection::vec(-1.0f64..1.0, f * n * d)
            .prop_map(move |data| VisualTokenGrid::new(f, n, d, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn removal_set_matches_brute_force(grid in grid_strategy(), k_rate in 0.0f64..=1.0) {
        let config = CompressionConfig { k_rate, ..Default::default() };
        let result = apply_ttm(&grid, &config);
        prop_assert_eq!(result.removed_ids(), oracle_removed(&grid, k_rate, 4));
        // partition of the input
        let mut all: Vec<TokenId> = result.ids.iter().copied().chain(result.removed_ids()).collect();
        all.sort();
        prop_assert_eq!(all, grid.ids().collect::<Vec<_>>());
        prop_assert!(result.ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coordinate_permutation_leaves_decisions_unchanged(grid in grid_strategy(), k_rate in 0.0f64..=1.0, rot in 0usize..16) {
        let d = grid.hidden_dim();
        let permuted: Vec<f64> = grid
            .data()
            .chunks(d)
            .flat_map(|row| (0..d).map(move |i| row[(i + rot) % d]))
            .collect();
        let permuted = VisualTokenGrid::new(grid.frames(), grid.tokens_per_frame(), d, permuted).unwrap();
        let config = CompressionConfig { k_rate, ..Default::default() };
        prop_assert_eq!(apply_ttm(&grid, &config).removed_ids(), apply_ttm(&permuted, &config).removed_ids());
    }

    #[test]
    fn merging_is_deterministic(grid in grid_strategy(), k_rate in 0.0f64..=1.0) {
        let config = CompressionConfig { k_rate, ..Default::default() };
        prop_assert_eq!(apply_ttm(&grid, &config), apply_ttm(&grid, &config));
    }
}

#[test]
fn six_frame_enumeration() {
    // frames=6, window 4: windows {0..3} and {4,5}; frame 4 is kept whole
    let data: Vec<f64> = (0..6 * 2 * 3).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let grid = VisualTokenGrid::new(6, 2, 3, data).unwrap();
    let r = apply_ttm(
        &grid,
        &CompressionConfig {
            k_rate: 1.0,
            ..Default::default()
        },
    );
    let kept: Vec<TokenId> = r.ids.clone();
    assert_eq!(
        kept,
        vec![
            TokenId::new(0, 0),
            TokenId::new(0, 1),
            TokenId::new(4, 0),
            TokenId::new(4, 1)
        ]
    );
}
