//! Lattice matrices (rows are the cell vectors) and their standard form.

use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::Rotation;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cell matrix in Å with rows `l₁, l₂, l₃` and positive determinant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Lattice<T: Real>(Matrix3<T>);

/// Cell lengths (Å) and angles (degrees): `α = ∠(b, c)`, `β = ∠(a, c)`, `γ = ∠(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> Lattice<T> {
    pub fn new(m: Matrix3<T>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidLattice("non-finite entries".into()));
        }
        let det = m.determinant();
        if det <= T::zero() {
            return Err(Error::InvalidLattice(format!(
                "determinant {:.6e} is not positive",
                det.as_f64()
            )));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[T; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_rows(&[
            RowVector3::from(rows[0]),
            RowVector3::from(rows[1]),
            RowVector3::from(rows[2]),
        ]))
    }

    pub(crate) fn new_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn cubic(a: T) -> Self {
        Self(Matrix3::identity() * a)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn rows(&self) -> [[T; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn volume(&self) -> T {
        self.0.determinant()
    }

    pub fn lengths(&self) -> Vector3<T> {
        Vector3::new(self.0.row(0).norm(), self.0.row(1).norm(), self.0.row(2).norm())
    }

    /// Gram matrix `L Lᵀ` of row vectors; invariant under `L ↦ L Qᵀ`.
    pub fn gram(&self) -> Matrix3<T> {
        self.0 * self.0.transpose()
    }

    /// Row-vector fractional coordinates to Cartesian: `x = f L`.
    pub fn to_cartesian(&self, frac: &Vector3<T>) -> Vector3<T> {
        self.0.transpose() * frac
    }

    /// Cartesian row vector to fractional coordinates: `f = x L⁻¹`.
    pub fn to_fractional(&self, cart: &Vector3<T>) -> Vector3<T> {
        let inv_t = self
            .0
            .transpose()
            .try_inverse()
            .expect("lattice with positive determinant is invertible");
        inv_t * cart
    }

    /// Inverse transpose, for batch conversions.
    pub fn inverse_transpose(&self) -> Matrix3<T> {
        self.0
            .transpose()
            .try_inverse()
            .expect("lattice with positive determinant is invertible")
    }

    /// Rotates the cell: `L ↦ L qᵀ`.
    pub fn rotated(&self, q: &Rotation<T>) -> Self {
        Self(self.0 * q.matrix().transpose())
    }

    pub fn params(&self) -> LatticeParams<T> {
        lattice_params(self)
    }

    pub fn cast<U: Real>(&self) -> Lattice<U> {
        Lattice(self.0.map(|x| U::lit(x.as_f64())))
    }

    /// Lower-triangular with positive diagonal and non-decreasing row lengths.
    pub fn is_standard(&self, tol: T) -> bool {
        let m = &self.0;
        let lens = self.lengths();
        m[(0, 1)].abs() <= tol
            && m[(0, 2)].abs() <= tol
            && m[(1, 2)].abs() <= tol
            && m[(0, 0)] > T::zero()
            && m[(1, 1)] > T::zero()
            && m[(2, 2)] > T::zero()
            && lens[0] <= lens[1] + tol
            && lens[1] <= lens[2] + tol
    }
}

/// Sorts rows by length and rotates the cell into lower-triangular form.
///
/// Returns `(l_std, q)` with `l_std = P l qᵀ` for a signed row permutation `P`.
/// Cartesian row data belonging to `l` maps into the new frame as `x ↦ x qᵀ`.
pub fn standardize_lattice<T: Real>(l: &Lattice<T>) -> Result<(Lattice<T>, Rotation<T>)> {
    let m = l.0;
    if m.determinant() <= T::zero() {
        return Err(Error::InvalidLattice("singular or left-handed lattice".into()));
    }
    let lens = l.lengths();
    let mut order = [0usize, 1, 2];
    // Stable: equal lengths keep their input order.
    order.sort_by(|&i, &j| lens[i].partial_cmp(&lens[j]).unwrap());
    let mut p = Matrix3::from_rows(&[m.row(order[0]), m.row(order[1]), m.row(order[2])]);
    if p.determinant() < T::zero() {
        let neg = -p.row(2);
        p.set_row(2, &neg);
    }

    // Gram-Schmidt on the columns of pᵀ: pᵀ = Q R, so p = Rᵀ Qᵀ and p Q = Rᵀ.
    let pt = p.transpose();
    let mut q = Matrix3::<T>::zeros();
    for j in 0..3 {
        let mut v: Vector3<T> = pt.column(j).into_owned();
        for i in 0..j {
            let qi: Vector3<T> = q.column(i).into_owned();
            let proj = qi.dot(&v);
            v -= qi * proj;
        }
        let n = v.norm();
        if n <= T::zero() {
            return Err(Error::InvalidLattice("degenerate cell vectors".into()));
        }
        q.set_column(j, &(v / n));
    }
    let mut std = p * q;
    // Exact zeros above the diagonal.
    std[(0, 1)] = T::zero();
    std[(0, 2)] = T::zero();
    std[(1, 2)] = T::zero();
    let rot = Rotation::from_matrix(q.transpose())?;
    Ok((Lattice::new(std)?, rot))
}

pub fn lattice_params<T: Real>(l: &Lattice<T>) -> LatticeParams<T> {
    let a_vec: Vector3<T> = l.0.row(0).transpose();
    let b_vec: Vector3<T> = l.0.row(1).transpose();
    let c_vec: Vector3<T> = l.0.row(2).transpose();
    let (a, b, c) = (a_vec.norm(), b_vec.norm(), c_vec.norm());
    let angle = |u: &Vector3<T>, v: &Vector3<T>, nu: T, nv: T| {
        (u.dot(v) / (nu * nv)).clamp(-T::one(), T::one()).acos() * T::lit(180.0) / T::pi()
    };
    LatticeParams {
        a,
        b,
        c,
        alpha: angle(&b_vec, &c_vec, b, c),
        beta: angle(&a_vec, &c_vec, a, c),
        gamma: angle(&a_vec, &b_vec, a, b),
    }
}

/// Lower-triangular cell with the given lengths and angles.
pub fn params_to_lattice<T: Real>(p: &LatticeParams<T>) -> Result<Lattice<T>> {
    let zero = T::zero();
    let lim = T::lit(180.0);
    let finite = [p.a, p.b, p.c, p.alpha, p.beta, p.gamma]
        .iter()
        .all(|x| x.is_finite());
    if !finite || p.a <= zero || p.b <= zero || p.c <= zero {
        return Err(Error::InvalidParameter("lengths must be positive and finite".into()));
    }
    for ang in [p.alpha, p.beta, p.gamma] {
        if ang <= zero || ang >= lim {
            return Err(Error::InvalidParameter(format!(
                "angle {:.4}° outside (0°, 180°)",
                ang.as_f64()
            )));
        }
    }
    let (ca, cb, cg) = (
        deg(p.alpha).cos(),
        deg(p.beta).cos(),
        deg(p.gamma).cos(),
    );
    let sg = deg(p.gamma).sin();
    // Gram determinant of the unit cell vectors.
    let gram_det = T::one() - ca * ca - cb * cb - cg * cg + T::lit(2.0) * ca * cb * cg;
    if gram_det <= zero {
        return Err(Error::InvalidParameter(format!(
            "angles ({:.3}°, {:.3}°, {:.3}°) do not form a cell",
            p.alpha.as_f64(),
            p.beta.as_f64(),
            p.gamma.as_f64()
        )));
    }
    let cy = (ca - cb * cg) / sg;
    let cz = gram_det.sqrt() / sg;
    let m = Matrix3::new(
        p.a,
        zero,
        zero,
        p.b * cg,
        p.b * sg,
        zero,
        p.c * cb,
        p.c * cy,
        p.c * cz,
    );
    Lattice::new(m).map_err(|e| Error::InvalidParameter(e.to_string()))
}

#[inline]
fn deg<T: Real>(x: T) -> T {
    x * T::pi() / T::lit(180.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_is_already_standard() {
        let (s, q) = standardize_lattice(&Lattice::<f64>::cubic(1.0)).unwrap();
        assert_eq!(s.matrix(), &Matrix3::identity());
        assert_eq!(q.matrix(), &Matrix3::identity());
    }

    #[test]
    fn sorts_diagonal_lengths() {
        let l = Lattice::new(Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0))).unwrap();
        let (s, q) = standardize_lattice(&l).unwrap();
        assert_relative_eq!(s.lengths(), Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        assert!(s.is_standard(1e-12));
        assert_relative_eq!(s.volume(), 6.0, epsilon = 1e-12);
        assert!(q.orthonormality_error() < 1e-12);
    }

    #[test]
    fn rejects_left_handed() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Lattice::new(m).is_err());
        let l = Lattice::new_unchecked(m);
        assert!(matches!(standardize_lattice(&l), Err(Error::InvalidLattice(_))));
    }

    #[test]
    fn cubic_params() {
        let l = params_to_lattice(&LatticeParams {
            a: 5.0,
            b: 5.0,
            c: 5.0,
            alpha: 90.0,
            beta: 90.0,
            gamma: 90.0,
        })
        .unwrap();
        assert_relative_eq!(l.matrix(), &(Matrix3::identity() * 5.0), epsilon = 1e-12);
    }

    #[test]
    fn hexagonal_params_roundtrip() {
        let p = LatticeParams {
            a: 3.0,
            b: 4.0,
            c: 5.0,
            alpha: 90.0,
            beta: 90.0,
            gamma: 120.0,
        };
        let l = params_to_lattice(&p).unwrap();
        let m = l.matrix();
        assert_eq!((m[(0, 1)], m[(0, 2)], m[(1, 2)]), (0.0, 0.0, 0.0));
        let back = lattice_params(&l);
        assert_relative_eq!(back.a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(back.b, 4.0, epsilon = 1e-12);
        assert_relative_eq!(back.c, 5.0, epsilon = 1e-12);
        assert_relative_eq!(back.alpha, 90.0, epsilon = 1e-9);
        assert_relative_eq!(back.beta, 90.0, epsilon = 1e-9);
        assert_relative_eq!(back.gamma, 120.0, epsilon = 1e-9);
    }

    #[test]
    fn impossible_angles_rejected() {
        let p = LatticeParams {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            alpha: 179.9,
            beta: 1.0,
            gamma: 1.0,
        };
        // Oracle: the metric tensor has a non-positive eigenvalue.
        let (ca, cb, cg) = (
            179.9f64.to_radians().cos(),
            1f64.to_radians().cos(),
            1f64.to_radians().cos(),
        );
        let g = Matrix3::new(1.0, cg, cb, cg, 1.0, ca, cb, ca, 1.0);
        let min_eig = g.symmetric_eigenvalues().min();
        assert!(min_eig <= 0.0);
        assert!(matches!(params_to_lattice(&p), Err(Error::InvalidParameter(_))));
    }
}
