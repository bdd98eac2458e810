//! SO(3): rotation matrices, the Rodrigues exponential and its inverse.
//!
//! Rotations act on column vectors, `x ↦ R x`. Row-vector data (lattice rows,
//! Cartesian positions stored as rows) therefore transform as `xᵀ ↦ xᵀ Rᵀ`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Below this angle the exp/log maps switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1.0e-4;
/// Within this distance of π the log map recovers the axis from the symmetric part.
const NEAR_PI: f64 = 1.0e-3;

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Rotation<T: Real>(Matrix3<T>);

/// Tangent vector at the identity: direction is the axis, norm the angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct AxisAngle<T: Real>(Vector3<T>);

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `mᵀm = I` and `det(m) = +1`.
    pub fn from_matrix(m: Matrix3<T>) -> Result<Self> {
        check_rotation(&m)?;
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a rotation (by construction).
    #[inline]
    pub(crate) fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    /// Nearest rotation in Frobenius norm (polar factor).
    pub fn project(m: &Matrix3<T>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRotation("non-finite matrix".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidRotation("svd failed".into())),
        };
        let mut r = u * v_t;
        if r.determinant() < T::zero() {
            let mut u = u;
            // Flip the column paired with the smallest singular value.
            let (k, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, T::max_value().unwrap()), |acc, (i, &s)| {
                    if s < acc.1 {
                        (i, s)
                    } else {
                        acc
                    }
                });
            let col = -u.column(k);
            u.set_column(k, &col);
            r = u * v_t;
        }
        Ok(Self(r))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    #[inline]
    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    #[inline]
    pub fn apply(&self, x: &Vector3<T>) -> Vector3<T> {
        self.0 * x
    }

    /// Maps to `f64` (or any other precision).
    pub fn cast<U: Real>(&self) -> Rotation<U> {
        Rotation(self.0.map(|x| U::lit(x.as_f64())))
    }

    /// Frobenius norm of `mᵀm - I`.
    pub fn orthonormality_error(&self) -> T {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}

fn check_rotation<T: Real>(m: &Matrix3<T>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let tol = T::validation_tol();
    let ortho = (m.transpose() * m - Matrix3::identity()).norm();
    if ortho > tol {
        return Err(Error::InvalidRotation(format!(
            "orthonormality residual {:.3e}",
            ortho.as_f64()
        )));
    }
    let det = m.determinant();
    if (det - T::one()).abs() > tol {
        return Err(Error::InvalidRotation(format!(
            "determinant {:.6}",
            det.as_f64()
        )));
    }
    Ok(())
}

impl<T: Real> AxisAngle<T> {
    #[inline]
    pub fn new(v: Vector3<T>) -> Self {
        Self(v)
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    #[inline]
    pub fn vector(&self) -> &Vector3<T> {
        &self.0
    }

    #[inline]
    pub fn angle(&self) -> T {
        self.0.norm()
    }

    /// Equivalent axis-angle with norm in `[0, π]`.
    pub fn canonical(&self) -> Self {
        so3_log(&so3_exp(self))
    }
}

#[inline]
pub fn hat<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

#[inline]
fn vee_antisym<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    // vee(m - mᵀ)
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Coefficients `sin ω / ω` and `(1 - cos ω) / ω²`, series-expanded near zero.
pub(crate) fn exp_coefficients<T: Real>(theta: T) -> (T, T) {
    if theta < T::lit(SMALL_ANGLE) {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0),
            T::lit(0.5) - t2 / T::lit(24.0) + t4 / T::lit(720.0),
        )
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / (theta * theta))
    }
}

/// Rodrigues' formula.
pub fn so3_exp<T: Real>(v: &AxisAngle<T>) -> Rotation<T> {
    let theta = v.0.norm();
    let (a, b) = exp_coefficients(theta);
    let k = hat(&v.0);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`so3_exp`], returning the canonical branch with angle in `[0, π]`.
///
/// At exactly π the axis sign is fixed so that its largest-magnitude component is
/// positive.
pub fn so3_log<T: Real>(r: &Rotation<T>) -> AxisAngle<T> {
    let m = &r.0;
    let w = vee_antisym(m);
    let sin2 = w.norm(); // 2 sin ω
    let cos2 = m.trace() - T::one(); // 2 cos ω
    let theta = sin2.atan2(cos2);

    if theta < T::lit(SMALL_ANGLE) {
        let t2 = theta * theta;
        return AxisAngle(w * (T::lit(0.5) + t2 / T::lit(12.0)));
    }
    if T::pi() - theta > T::lit(NEAR_PI) {
        return AxisAngle(w * (theta / sin2));
    }

    // Near π: e eᵀ = (S - cos ω I) / (1 - cos ω) with S the symmetric part.
    let half = T::lit(0.5);
    let cos_t = cos2 * half;
    let s = (m + m.transpose()) * half;
    let outer = (s - Matrix3::identity() * cos_t) / (T::one() - cos_t);
    let mut k = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<T> = outer.column(k).into_owned();
    axis /= axis.norm();
    let proj = axis.dot(&w);
    if proj.abs() > T::validation_tol() {
        if proj < T::zero() {
            axis = -axis;
        }
    } else {
        let mut j = 0;
        for i in 1..3 {
            if axis[i].abs() > axis[j].abs() {
                j = i;
            }
        }
        if axis[j] < T::zero() {
            axis = -axis;
        }
    }
    AxisAngle(axis * theta)
}

/// Validates a raw matrix and takes its logarithm.
pub fn so3_log_matrix<T: Real>(m: &Matrix3<T>) -> Result<AxisAngle<T>> {
    Rotation::from_matrix(*m).map(|r| so3_log(&r))
}

/// `r0 · exp(t · log(r0ᵀ r1))`.
pub fn so3_geodesic<T: Real>(r0: &Rotation<T>, r1: &Rotation<T>, t: T) -> Rotation<T> {
    if t == T::zero() {
        return *r0;
    }
    let rel = so3_log(&r0.transpose().compose(r1));
    let step = so3_exp(&AxisAngle(rel.0 * t));
    r0.compose(&step)
}

/// Angle of the relative rotation, in `[0, π]`.
pub fn geodesic_distance_so3<T: Real>(r0: &Rotation<T>, r1: &Rotation<T>) -> T {
    let m = r0.0.transpose() * r1.0;
    let sin2 = vee_antisym(&m).norm();
    let cos2 = m.trace() - T::one();
    sin2.atan2(cos2)
}

/// Tangent at `base` pointing to `target`, in the body frame: `log(baseᵀ target)`.
pub fn log_at<T: Real>(base: &Rotation<T>, target: &Rotation<T>) -> AxisAngle<T> {
    so3_log(&base.transpose().compose(target))
}

/// Spherical decomposition of an axis-angle vector.
///
/// Returns `(ω, κ, ρ)`: angle, inclination of the axis from +z in `[0, π]`, and
/// azimuth in `[0, 2π)`. The zero rotation maps to `(0, 0, 0)`.
pub fn axis_angle_to_spherical<T: Real>(v: &AxisAngle<T>) -> (T, T, T) {
    let omega = v.0.norm();
    if omega == T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let e = v.0 / omega;
    let kappa = e.z.clamp(-T::one(), T::one()).acos();
    let mut rho = e.y.atan2(e.x);
    if rho < T::zero() {
        rho += T::two_pi();
    }
    if rho >= T::two_pi() {
        rho = T::zero();
    }
    (omega, kappa, rho)
}

/// Elementary rotation about x.
pub fn rot_x<T: Real>(angle: T) -> Rotation<T> {
    so3_exp(&AxisAngle(Vector3::new(angle, T::zero(), T::zero())))
}

pub fn rot_y<T: Real>(angle: T) -> Rotation<T> {
    so3_exp(&AxisAngle(Vector3::new(T::zero(), angle, T::zero())))
}

pub fn rot_z<T: Real>(angle: T) -> Rotation<T> {
    so3_exp(&AxisAngle(Vector3::new(T::zero(), T::zero(), angle)))
}
