//! Scalar abstraction for the numeric kernels.
//!
//! Everything that does arithmetic on uncertainties, stabilities, or vote
//! weights is generic over [`Real`]; the pipeline instantiates `f64` through
//! the aliases at the crate root.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar for uncertainty statistics and vote weights.
pub trait Real: Float + FromPrimitive + std::fmt::Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + std::fmt::Debug + Send + Sync + 'static {}
