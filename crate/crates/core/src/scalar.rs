//! Scalar abstraction shared by the physics kernels.
//!
//! Everything in the steering, optics and device models is written against
//! [`Real`], so the same code runs in `f32` (embedded controller builds) and
//! `f64` (analysis and tests).

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Machine-precision dependent tolerance used by internal iterations.
    const EPS_ITER: f64;

    fn erf(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Standard normal cumulative distribution.
    #[inline]
    fn norm_cdf(self) -> Self {
        let half = Self::lit(0.5);
        half * (Self::one() + (self * Self::FRAC_1_SQRT_2()).erf())
    }
}

impl Real for f32 {
    const EPS_ITER: f64 = 1e-6;
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    const EPS_ITER: f64 = 1e-13;
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
