//! Scalar abstraction for the geometry kernels.
//!
//! The manifold and geometric-descriptor code is written once against [`Real`]
//! and instantiated for `f64` (the default used throughout the pipeline) and
//! `f32`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the geometry kernels: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Tolerance used when validating orthonormality and determinants.
    ///
    /// 1e-9 for `f64`; scaled from machine epsilon for lower precision.
    #[inline]
    fn validation_tol() -> Self {
        let eps = Self::default_epsilon();
        let scaled = eps * Self::lit(1.0e3);
        let floor = Self::lit(1.0e-9);
        if scaled > floor {
            scaled
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
