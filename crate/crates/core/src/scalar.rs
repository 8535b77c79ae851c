use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the networks, propagation and statistics run on.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` constant.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable")
    }

    fn from_usize_lossy(value: usize) -> Self {
        Self::from_usize(value).expect("usize representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm of a flattened tensor.
pub fn l2_norm<T: Scalar>(values: &[T]) -> T {
    values.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Gradient of the Euclidean norm; zero at the origin.
pub fn l2_norm_grad<T: Scalar>(values: &[T], norm: T) -> Vec<T> {
    if norm == T::zero() {
        return vec![T::zero(); values.len()];
    }
    values.iter().map(|&v| v / norm).collect()
}
