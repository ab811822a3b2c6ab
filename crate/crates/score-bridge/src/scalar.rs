//! Floating-point scalar abstraction: `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use rand::Rng;

/// Scalar type the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. The documented tolerances of the
/// closed-form oracles and gradient checks assume `f64`; `f32` is usable for
/// cheap forward simulation.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the uniform distribution on `[0, 1)`.
    fn uniform_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy-free conversion of small constants and counts.
    #[inline]
    fn cast<T: NumCast>(value: T) -> Self {
        NumCast::from(value).expect("value representable in scalar type")
    }

    /// View as `f64` for reporting, hashing and error messages.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }

    #[inline]
    fn uniform_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }

    #[inline]
    fn uniform_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }
}
