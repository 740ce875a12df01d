//! Floating-point abstraction for the ranking and training math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type for BM25 scores, cosine similarities and classifier weights.
///
/// The pipeline instantiates everything at `f64` (see the aliases at the
/// crate root); `f32` is supported for callers that want the smaller
/// footprint.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}
