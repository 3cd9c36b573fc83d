//! Scalar abstraction shared by every solver in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the discretization and solvers are generic over.
///
/// Implemented for `f32` and `f64`. Tolerances quoted in the solver options
/// are clamped from below by a small multiple of [`Float::epsilon`], so the
/// same defaults are usable at both precisions.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for the finite literals used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `max(tol, factor * epsilon)`.
    #[inline]
    fn tol_floor(tol: f64, factor: f64) -> Self {
        Self::lit(tol).max(Self::lit(factor) * Self::epsilon())
    }

    #[inline]
    fn pi() -> Self {
        Self::lit(std::f64::consts::PI)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Positive part `max(0, x)`.
#[inline]
pub fn pos<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        S::zero()
    }
}
