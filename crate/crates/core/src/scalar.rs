//! Scalar abstraction shared by the floating-point pipeline.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Real scalar the registration pipeline is generic over (`f32` or `f64`).
///
/// Besides the field operations from [`RealField`], every scalar carries the
/// tolerance used to validate rigid transforms at that precision.
pub trait Real: RealField + Copy + ToPrimitive + Default {
    /// Element-wise tolerance for `RᵀR = I`, `det R = 1` style checks.
    fn validity_tol() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn validity_tol() -> Self {
        1e-9
    }
}

impl Real for f32 {
    fn validity_tol() -> Self {
        1e-5
    }
}
