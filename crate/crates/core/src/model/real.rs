use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Floating point element type of model tensors: `f32` for training, `f64`
/// for gradient checks.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + AddAssign + Sum + Debug + Display + Send + Sync + Default + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
