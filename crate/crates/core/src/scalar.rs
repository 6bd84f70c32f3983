use std::fmt::{Debug, Display};

/// Real scalar used by the embedding metrics: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for wire-format vectors.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl<T> Scalar for T where
    T: num_traits::Float
        + num_traits::FromPrimitive
        + num_traits::NumAssign
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
