use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dims::ModelDims;
use crate::scalar::Scalar;

/// One layer's projections, all row-major with the input dimension first.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub hidden: usize,
    pub ffn_inner: usize,
    pub w_q: Vec<T>,
    pub w_k: Vec<T>,
    pub w_v: Vec<T>,
    pub w_o: Vec<T>,
    /// `hidden × ffn_inner`
    pub w_up: Vec<T>,
    /// `ffn_inner × hidden`
    pub w_down: Vec<T>,
}

/// Variance-preserving uniform init for a `fan_in × fan_out` matrix.
pub(crate) fn uniform_matrix<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Vec<T> {
    let a = gain * (3.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    (0..fan_in * fan_out)
        .map(|_| T::from_f64_lossy(dist.sample(rng)))
        .collect()
}

impl<T: Scalar> LayerWeights<T> {
    /// Deterministic in `(seed, layer)`.
    pub fn generate(dims: &ModelDims, seed: u64, layer: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(layer as u64 + 1);
        let (d, m) = (dims.hidden, dims.ffn_inner);
        Self {
            hidden: d,
            ffn_inner: m,
            w_q: uniform_matrix(&mut rng, d, d, 1.0),
            w_k: uniform_matrix(&mut rng, d, d, 1.0),
            w_v: uniform_matrix(&mut rng, d, d, 1.0),
            w_o: uniform_matrix(&mut rng, d, d, 0.5),
            w_up: uniform_matrix(&mut rng, d, m, 1.0),
            w_down: uniform_matrix(&mut rng, m, d, 0.5),
        }
    }

    pub fn identity(dims: &ModelDims) -> Self {
        let d = dims.hidden;
        let eye: Vec<T> = (0..d * d)
            .map(|i| if i / d == i % d { T::one() } else { T::zero() })
            .collect();
        Self {
            hidden: d,
            ffn_inner: dims.ffn_inner,
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye.clone(),
            w_o: eye,
            w_up: vec![T::zero(); d * dims.ffn_inner],
            w_down: vec![T::zero(); dims.ffn_inner * d],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o, &self.w_up, &self.w_down]
            .iter()
            .all(|w| w.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_layer() {
        let dims = ModelDims::new(3, 8, 16, 2).unwrap();
        let a = LayerWeights::<f32>::generate(&dims, 5, 1);
        assert_eq!(a, LayerWeights::generate(&dims, 5, 1));
        assert_ne!(a.w_q, LayerWeights::<f32>::generate(&dims, 5, 2).w_q);
        assert_ne!(a.w_q, LayerWeights::<f32>::generate(&dims, 6, 1).w_q);
        assert!(a.is_finite());
        assert_eq!(a.w_up.len(), 8 * 16);
    }
}
