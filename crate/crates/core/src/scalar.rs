use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};

/// Floating-point type usable for embeddings, scores and gradients.
pub trait Scalar: Float + FloatConst + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Name written into checkpoints.
    const NAME: &'static str;

    fn from_f64(value: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
