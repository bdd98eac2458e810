//! PCA frames, the equivariant reference vector and the axis-flip state χ.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::Result;
use crate::manifold::Rotation;
use crate::Real;

const EIGEN_TIE: f64 = 1.0e-10;
const DEGENERATE_D: f64 = 1.0e-8;
const NU_ZERO: f64 = 1.0e-8;

/// Geometric centroid.
pub fn centroid<T: Real>(coords: &[Vector3<T>]) -> Vector3<T> {
    let n = T::from_usize(coords.len()).unwrap();
    coords.iter().fold(Vector3::zeros(), |acc, x| acc + x) / n
}

/// `(1/N) Σ yᵢ yᵢᵀ` of centred coordinates.
pub fn covariance<T: Real>(coords: &[Vector3<T>]) -> Matrix3<T> {
    let c = centroid(coords);
    let n = T::from_usize(coords.len()).unwrap();
    coords
        .iter()
        .map(|x| {
            let y = x - c;
            y * y.transpose()
        })
        .fold(Matrix3::zeros(), |acc, m| acc + m)
        / n
}

/// Eigenvectors of a symmetric 3×3 matrix as columns of a right-handed matrix,
/// ordered by descending eigenvalue.
///
/// Each eigenvector's largest-magnitude component is made positive before `u₃`
/// is flipped (if needed) to make the determinant +1. Near-equal eigenvalues
/// are ordered by the lexicographic order of their eigenvectors' absolute
/// components.
pub fn sorted_eigen<T: Real>(m: &Matrix3<T>) -> (Matrix3<T>, [T; 3]) {
    let eig = SymmetricEigen::new(*m);
    let tie = T::lit(EIGEN_TIE);
    let mut vecs: Vec<(T, Vector3<T>)> = (0..3)
        .map(|k| {
            let mut v: Vector3<T> = eig.eigenvectors.column(k).into_owned();
            let mut big = 0;
            for i in 1..3 {
                if v[i].abs() > v[big].abs() + tie {
                    big = i;
                }
            }
            if v[big] < T::zero() {
                v = -v;
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    vecs.sort_by(|a, b| {
        if (a.0 - b.0).abs() >= tie {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        } else {
            let aa = a.1.map(|x| x.abs());
            let bb = b.1.map(|x| x.abs());
            for i in 0..3 {
                if (aa[i] - bb[i]).abs() > tie {
                    return bb[i].partial_cmp(&aa[i]).unwrap_or(Ordering::Equal);
                }
            }
            Ordering::Equal
        }
    });
    let mut u = Matrix3::from_columns(&[vecs[0].1, vecs[1].1, vecs[2].1]);
    if u.determinant() < T::zero() {
        let neg = -u.column(2);
        u.set_column(2, &neg);
    }
    (u, [vecs[0].0, vecs[1].0, vecs[2].0])
}

/// Principal axes of a point cloud: right-handed `U` with columns `u₁, u₂, u₃`
/// and eigenvalues `λ₁ ≥ λ₂ ≥ λ₃` of the covariance.
pub fn pca_frame<T: Real>(coords: &[Vector3<T>]) -> (Rotation<T>, [T; 3]) {
    let (u, lambda) = sorted_eigen(&covariance(coords));
    let r = Rotation::project(&u).unwrap_or_else(|_| Rotation::identity());
    (r, lambda)
}

/// Mass-weighted mean minus geometric mean.
///
/// When that vanishes (‖D‖ < 1e-8 Å) the vector from the centroid to its nearest
/// atom is used instead; a molecule with every atom at the centroid gets `+x̂`.
pub fn equivariant_reference(coords: &[Vector3<f64>], masses: &[f64]) -> Vector3<f64> {
    let c = centroid(coords);
    let total: f64 = masses.iter().sum();
    let cm = coords
        .iter()
        .zip(masses)
        .fold(Vector3::zeros(), |acc, (x, &m)| acc + x * m)
        / total;
    let d = cm - c;
    if d.norm() >= DEGENERATE_D {
        return d;
    }
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for x in coords {
        let v = x - c;
        let n = v.norm();
        if n > DEGENERATE_D && best.map_or(true, |(b, _)| n < b - 1e-12) {
            best = Some((n, v));
        }
    }
    best.map(|(_, v)| v).unwrap_or_else(Vector3::x)
}

/// Result of [`extract_chi`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiFrame {
    pub chi: u8,
    /// Signs of the projections of `D` on the principal axes.
    pub eta: [i8; 3],
    /// Sign-aligned, right-handed principal frame.
    pub frame: Rotation<f64>,
}

/// Axis-flip state from the parity of principal axes pointing away from `D`.
///
/// `χ = 0` for an even count of negative projections, `χ = 1` for odd. The
/// returned frame has each axis flipped to agree with `D`, then `u₃` negated if
/// that left it left-handed.
///
/// Projections with `|ν_k| < 1e-8` Å (e.g. the normal of a planar molecule)
/// carry no sign information; their signs are chosen to make the count even,
/// so such molecules always get `χ = 0`.
pub fn extract_chi(coords: &[Vector3<f64>], masses: &[f64]) -> Result<ChiFrame> {
    let (u, _) = pca_frame(coords);
    let d = equivariant_reference(coords, masses);
    let u = *u.matrix();
    let nu: Vec<f64> = (0..3).map(|k| u.column(k).dot(&d)).collect();
    let mut eta = [1i8; 3];
    for k in 0..3 {
        if nu[k] <= -NU_ZERO {
            eta[k] = -1;
        }
    }
    let free: Vec<usize> = (0..3).filter(|&k| nu[k].abs() < NU_ZERO).collect();
    let n_neg = eta.iter().filter(|&&e| e < 0).count();
    if let Some(&last) = free.last() {
        if n_neg % 2 == 1 {
            eta[last] = -1;
        }
    }
    let n_neg = eta.iter().filter(|&&e| e < 0).count();
    let chi = (n_neg % 2) as u8;
    let mut aligned = u;
    for k in 0..3 {
        if eta[k] < 0 {
            let neg = -aligned.column(k);
            aligned.set_column(k, &neg);
        }
    }
    if chi == 1 {
        let neg = -aligned.column(2);
        aligned.set_column(2, &neg);
    }
    Ok(ChiFrame {
        chi,
        eta,
        frame: Rotation::from_matrix(aligned)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::atomic_mass;
    use crate::manifold::{so3_exp, AxisAngle};
    use approx::assert_relative_eq;

    #[test]
    fn line_frame() {
        let pts: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let (u, l) = pca_frame(&pts);
        assert_relative_eq!(u.matrix().column(0).x.abs(), 1.0, epsilon = 1e-12);
        assert!(l[1].abs() < 1e-12 && l[2].abs() < 1e-12);
        assert!((u.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planar_normal_is_third_axis() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.1, 0.0),
            Vector3::new(0.3, 1.0, 0.0),
            Vector3::new(-1.0, 0.4, 0.0),
        ];
        let (u, l) = pca_frame(&pts);
        assert!(l[2].abs() < 1e-12);
        assert_relative_eq!(u.matrix().column(2).z.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_cloud_diagonalized() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.1, 0.2, -0.3),
            Vector3::new(1.4, -0.2, 0.5),
            Vector3::new(-0.7, 0.9, 0.1),
            Vector3::new(0.3, -1.1, 0.8),
            Vector3::new(-0.2, 0.4, -1.2),
        ];
        let cov = covariance(&pts);
        let (u, l) = pca_frame(&pts);
        let u = u.matrix();
        let resid = cov * u - u * Matrix3::from_diagonal(&Vector3::from(l));
        assert!(resid.norm() < 1e-9);
        assert!(l[0] >= l[1] && l[1] >= l[2]);
    }

    #[test]
    fn reference_vector_cases() {
        let h = atomic_mass("H").unwrap();
        let f = atomic_mass("F").unwrap();
        // Homonuclear diatomic: fallback to nearest atom.
        let dia = [Vector3::new(-0.37, 0.0, 0.0), Vector3::new(0.37, 0.0, 0.0)];
        let d = equivariant_reference(&dia, &[h, h]);
        assert_relative_eq!(d.norm(), 0.37, epsilon = 1e-12);
        // HF: points toward fluorine.
        let hf = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.92, 0.0, 0.0)];
        let d = equivariant_reference(&hf, &[h, f]);
        let expected = (0.92 * f) / (h + f) - 0.46;
        assert_relative_eq!(d.x, expected, epsilon = 1e-12);
        assert!(d.x > 0.0);
        // Point particle.
        let d = equivariant_reference(&[Vector3::new(1.0, 2.0, 3.0)], &[12.0]);
        assert_eq!(d, Vector3::x());
    }

    #[test]
    fn chi_table() {
        // Anisotropic cloud with distinct masses: D has non-zero projections.
        let pts = vec![
            Vector3::new(2.0, 0.3, 0.1),
            Vector3::new(-1.5, 0.2, -0.2),
            Vector3::new(0.1, 1.0, 0.3),
            Vector3::new(-0.3, -0.9, 0.4),
            Vector3::new(0.2, -0.1, -0.6),
        ];
        let masses = [12.0, 1.0, 16.0, 1.0, 14.0];
        let cf = extract_chi(&pts, &masses).unwrap();
        let n_neg = cf.eta.iter().filter(|&&e| e < 0).count();
        assert_eq!(cf.chi as usize, n_neg % 2);
        assert!((cf.frame.matrix().determinant() - 1.0).abs() < 1e-12);
        // Rotation invariance.
        let q = so3_exp(&AxisAngle::new(Vector3::new(0.4, -1.3, 2.2)));
        let rotated: Vec<_> = pts.iter().map(|x| q.apply(x) + Vector3::new(3.0, -1.0, 0.5)).collect();
        assert_eq!(extract_chi(&rotated, &masses).unwrap().chi, cf.chi);
        // Mirror flips χ.
        let mirrored: Vec<_> = pts.iter().map(|x| Vector3::new(x.x, x.y, -x.z)).collect();
        assert_eq!(extract_chi(&mirrored, &masses).unwrap().chi, 1 - cf.chi);
    }
}
