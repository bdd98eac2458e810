//! The flat 3-torus of fractional coordinates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A point on the unit 3-torus, every component in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct FracPoint<T: Real>(Vector3<T>);

impl<T: Real> FracPoint<T> {
    /// Wraps a raw fractional vector onto the torus.
    pub fn wrap(raw: Vector3<T>) -> Result<Self> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite fractional coordinate {:?}",
                raw.as_slice()
            )));
        }
        Ok(Self(raw.map(wrap_scalar)))
    }

    pub fn from_array(raw: [T; 3]) -> Result<Self> {
        Self::wrap(Vector3::from(raw))
    }

    #[inline]
    pub fn coords(&self) -> &Vector3<T> {
        &self.0
    }

    #[inline]
    pub fn to_array(&self) -> [T; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    /// Moves along the torus by `delta` and wraps.
    pub fn translate(&self, delta: &Vector3<T>) -> Result<Self> {
        Self::wrap(self.0 + delta)
    }
}

/// `x mod 1` in `[0, 1)`. Results within machine epsilon of 1 (e.g. from tiny
/// negative inputs) collapse to 0.
#[inline]
pub fn wrap_scalar<T: Real>(x: T) -> T {
    let w = x - x.floor();
    if w + T::default_epsilon() >= T::one() || w < T::zero() {
        T::zero()
    } else {
        w
    }
}

/// Free-function form of [`FracPoint::wrap`].
pub fn wrap<T: Real>(raw: Vector3<T>) -> Result<FracPoint<T>> {
    FracPoint::wrap(raw)
}

/// Minimum-image displacement on the torus, each component in `(-0.5, 0.5]`.
///
/// `wrap(f0 + d) == f1`; an exact half-cell separation resolves to `+0.5`.
pub fn torus_displacement<T: Real>(f0: &FracPoint<T>, f1: &FracPoint<T>) -> Vector3<T> {
    (f1.0 - f0.0).map(min_image_scalar)
}

/// Maps a raw difference into `(-0.5, 0.5]`.
#[inline]
pub fn min_image_scalar<T: Real>(d: T) -> T {
    let half = T::lit(0.5);
    d - (d - half).ceil()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(x: f64, y: f64, z: f64) -> FracPoint<f64> {
        FracPoint::wrap(Vector3::new(x, y, z)).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(fp(0.0, 0.0, 0.0).to_array(), [0.0, 0.0, 0.0]);
        assert_eq!(fp(1.25, -0.25, 2.0).to_array(), [0.25, 0.75, 0.0]);
        assert_eq!(fp(-1e-16, 0.5, 0.5).to_array(), [0.0, 0.5, 0.5]);
    }

    #[test]
    fn wrap_rejects_nan() {
        assert!(FracPoint::wrap(Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(FracPoint::wrap(Vector3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn wrap_matches_repeated_shift_oracle() {
        // Oracle: shift by whole cells until in range.
        for &x in &[-1e-16, -3.75, 7.5, 0.999_999_999, -0.0, 12.0, -1e-300] {
            let mut y: f64 = x;
            while y < 0.0 {
                y += 1.0;
            }
            while y >= 1.0 {
                y -= 1.0;
            }
            if y >= 1.0 {
                y = 0.0;
            }
            let w = wrap_scalar(x);
            assert!((0.0..1.0).contains(&w));
            assert!((w - y).abs() < 1e-12 || (w - y).abs() > 1.0 - 1e-12, "{x}: {w} vs {y}");
        }
    }

    #[test]
    fn displacement_examples() {
        let d = torus_displacement(&fp(0.9, 0.9, 0.9), &fp(0.1, 0.1, 0.1));
        for k in 0..3 {
            assert!((d[k] - 0.2).abs() < 1e-12);
        }
        let same = fp(0.3, 0.4, 0.5);
        assert_eq!(torus_displacement(&same, &same), Vector3::zeros());
        let tie = torus_displacement(&fp(0.25, 0.0, 0.0), &fp(0.75, 0.0, 0.0));
        assert_eq!(tie.x, 0.5);
        let tie = torus_displacement(&fp(0.75, 0.0, 0.0), &fp(0.25, 0.0, 0.0));
        assert_eq!(tie.x, 0.5);
        let near = torus_displacement(&fp(0.2, 0.0, 0.0), &fp(0.7, 0.0, 0.0));
        assert!((near.x - 0.5).abs() < 1e-12);
    }
}
