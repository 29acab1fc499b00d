use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::CompressionConfig;
use super::grid::{TextTokens, VisualTokenGrid};
use crate::scalar::Scalar;

/// Frame-to-frame noise scale used by [`synth_grid`].
pub const DEFAULT_PERTURBATION: f64 = 0.25;

/// Deterministic synthetic grid seeded by `config.seed`, see [`synth_grid_with`].
pub fn synth_grid<T: Scalar>(
    config: &CompressionConfig,
    frames: usize,
    tokens_per_frame: usize,
    dim: usize,
) -> VisualTokenGrid<T> {
    synth_grid_with(config.seed, frames, tokens_per_frame, dim, DEFAULT_PERTURBATION)
}

/// Frame 0 is standard normal; every later frame is the previous frame plus
/// `perturbation` times fresh standard-normal noise, so neighbouring frames
/// are temporally redundant. Panics if any count is zero.
pub fn synth_grid_with<T: Scalar>(
    seed: u64,
    frames: usize,
    tokens_per_frame: usize,
    dim: usize,
    perturbation: f64,
) -> VisualTokenGrid<T> {
    assert!(frames >= 1 && tokens_per_frame >= 1 && dim >= 1, "counts must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame_len = tokens_per_frame * dim;
    let mut values: Vec<f64> = Vec::with_capacity(frames * frame_len);
    for _ in 0..frame_len {
        values.push(StandardNormal.sample(&mut rng));
    }
    for f in 1..frames {
        let prev = (f - 1) * frame_len;
        for i in 0..frame_len {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = values[prev + i] + perturbation * noise;
            values.push(v);
        }
    }
    let data = values.into_iter().map(T::from_f64_lossy).collect();
    VisualTokenGrid::new(frames, tokens_per_frame, dim, data).expect("synthetic grid is well formed")
}

/// Deterministic standard-normal text tokens.
pub fn synth_text<T: Scalar>(seed: u64, count: usize, dim: usize) -> TextTokens<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7874);
    let data = (0..count * dim)
        .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
        .collect();
    TextTokens::new(dim, data).expect("synthetic text is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dot;

    #[test]
    fn same_seed_is_bit_identical() {
        let c = CompressionConfig {
            seed: 7,
            ..Default::default()
        };
        let a: VisualTokenGrid<f32> = synth_grid(&c, 4, 5, 6);
        let b: VisualTokenGrid<f32> = synth_grid(&c, 4, 5, 6);
        let bits = |g: &VisualTokenGrid<f32>| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let other: VisualTokenGrid<f32> = synth_grid(&CompressionConfig::default(), 4, 5, 6);
        assert_ne!(bits(&a), bits(&other));
    }

    #[test]
    fn default_video_shape() {
        let g: VisualTokenGrid<f32> = synth_grid(&CompressionConfig::default(), 32, 196, 896);
        assert_eq!(g.len(), 6272);
        assert_eq!(g.data().len(), 6272 * 896);
    }

    #[test]
    fn zero_perturbation_repeats_frames() {
        let g: VisualTokenGrid<f64> = synth_grid_with(3, 4, 3, 5, 0.0);
        for f in 1..4 {
            for p in 0..3 {
                let a = g.row_at(p);
                let b = g.row_at(f * 3 + p);
                let cos = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
                assert!((cos - 1.0).abs() < 1e-12);
            }
        }
    }
}
