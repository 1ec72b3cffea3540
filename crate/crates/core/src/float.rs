use ndarray::NdFloat;
use num_traits::{FromPrimitive, NumCast};

/// Scalar type the solver is generic over.
///
/// Implemented for `f32` and `f64`. Tolerances that are stated in absolute
/// terms are clamped to a few machine epsilons so that single precision
/// remains usable.
pub trait Float: NdFloat + FromPrimitive + Default {
    fn cast<T: NumCast>(x: T) -> Self {
        <Self as NumCast>::from(x).unwrap()
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `max(tol, 16 eps)`.
    fn tolerance(tol: f64) -> Self {
        Self::cast(tol).max(Self::epsilon() * Self::cast(16.0))
    }
}

impl Float for f32 {}
impl Float for f64 {}
