use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type used by token grids, projections and caches.
///
/// Implemented for `f32` and `f64`. Score comparisons go through
/// [`Scalar::to_f64_lossless`] so ranking is identical for both widths.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Bit pattern of the value widened to 64 bits, used for fingerprinting rows.
    fn to_bits_u64(self) -> u64;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("Scalar always widens to f64")
    }
}

impl Scalar for f32 {
    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

/// Element-wise cast of a flat buffer between scalar widths.
pub fn cast_slice<A: Scalar, B: Scalar>(src: &[A]) -> Vec<B> {
    src.iter().map(|&v| B::from_f64_lossy(v.to_f64_lossless())).collect()
}

/// `x · w` for a row vector `x` (len `rows`) and a row-major `rows × cols` matrix.
pub fn vec_mat<T: Scalar>(x: &[T], w: &[T], cols: usize, out: &mut [T]) {
    debug_assert_eq!(w.len(), x.len() * cols);
    debug_assert_eq!(out.len(), cols);
    out.iter_mut().for_each(|o| *o = T::zero());
    for (&xi, row) in x.iter().zip(w.chunks_exact(cols)) {
        if xi == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Robust `floor` for products such as `0.7 * 10` that land a hair off an integer.
pub(crate) fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Robust `ceil`, see [`floor_count`].
pub(crate) fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}
