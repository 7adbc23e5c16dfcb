use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the tensor engine is generic over.
///
/// Only `f32` (the default training precision) and `f64` (oracle and
/// gradient-check precision) implement it.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Tag written into weight containers.
    const DTYPE: &'static str;

    /// Tolerance on `|⟨x,x⟩_L + k|` for points stored at this precision.
    const MANIFOLD_EPS: f64;

    /// Lossy conversion from `f64`, used for constants and initializers.
    fn of(v: f64) -> Self;

    fn f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const MANIFOLD_EPS: f64 = 1e-4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const MANIFOLD_EPS: f64 = 1e-9;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Runtime precision selector, used by the CLI and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F32
    }
}
