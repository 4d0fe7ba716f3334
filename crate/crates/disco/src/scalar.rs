//! Scalar abstraction: every numeric module in this crate is generic over a
//! floating-point type so the same code runs in `f32` or `f64`.

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar used throughout the toolkit.
///
/// `f32` and `f64` implement it; `f64` is the default via [`crate::Real`].
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    /// Draw one standard-normal variate from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw one uniform variate on `[0, 1)` from `rng`.
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Shorthand for lossless conversion of small constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable")
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}
