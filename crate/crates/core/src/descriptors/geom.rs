//! Shape descriptors from the gyration tensor.

use nalgebra::Vector3;

use crate::crystal::{covariance, sorted_eigen};
use crate::Real;

const DEGENERATE_REL: f64 = 1.0e-8;

/// `[R_g, asphericity, eccentricity, planarity, len_pc1, len_pc2, len_pc3]`.
///
/// Eigenvalues `λ₁ ≥ λ₂ ≥ λ₃` of `(1/m) Σ yᵢ yᵢᵀ` give `R_g = √Σλ`,
/// `b = λ₁ − (λ₂+λ₃)/2`, `e = √(1 − λ₃/λ₁)` (0 when `λ₁ = 0`) and planarity
/// `√λ₃`, evaluated as the RMS out-of-plane distance. Extents are `max − min`
/// of the projections on each principal axis; axes spanning a degenerate
/// eigenspace all get the diameter of the points projected onto that space.
pub fn geometric_features<T: Real>(coords: &[Vector3<T>]) -> [T; 7] {
    let zero = T::zero();
    if coords.len() < 2 {
        return [zero; 7];
    }
    let n = T::from_usize(coords.len()).unwrap();
    let c = coords.iter().fold(Vector3::zeros(), |a, x| a + x) / n;
    let y: Vec<Vector3<T>> = coords.iter().map(|x| x - c).collect();
    let (u, lambda) = sorted_eigen(&covariance(coords));
    let l = lambda.map(|x| x.max(zero));
    let rg = (y.iter().map(|v| v.norm_squared()).fold(zero, |a, b| a + b) / n).sqrt();
    let b = l[0] - (l[1] + l[2]) * T::lit(0.5);
    let tie = T::lit(DEGENERATE_REL) * l[0] + T::lit(1e-14);
    let ecc = if l[0] > T::lit(1e-300) && l[0] - l[2] > tie {
        ((l[0] - l[2]) / l[0]).sqrt()
    } else {
        zero
    };
    let u3 = u.column(2);
    let planarity = (y.iter().map(|v| u3.dot(v).powi(2)).fold(zero, |a, b| a + b) / n).sqrt();

    // Group axes into (near-)degenerate runs.
    let mut ext = [zero; 3];
    let mut k = 0;
    while k < 3 {
        let mut end = k + 1;
        while end < 3 && l[end - 1] - l[end] <= tie {
            end += 1;
        }
        let axes: Vec<Vector3<T>> = (k..end).map(|i| u.column(i).into_owned()).collect();
        let width = if axes.len() == 1 {
            let p: Vec<T> = y.iter().map(|v| axes[0].dot(v)).collect();
            let hi = p.iter().copied().fold(p[0], |a, b| a.max(b));
            let lo = p.iter().copied().fold(p[0], |a, b| a.min(b));
            hi - lo
        } else {
            let mut d2 = zero;
            for i in 0..y.len() {
                for j in (i + 1)..y.len() {
                    let diff = y[i] - y[j];
                    let s = axes.iter().map(|a| a.dot(&diff).powi(2)).fold(zero, |x, y| x + y);
                    d2 = d2.max(s);
                }
            }
            d2.sqrt()
        };
        for e in ext.iter_mut().take(end).skip(k) {
            *e = width;
        }
        k = end;
    }
    [rg, b, ecc, planarity, ext[0], ext[1], ext[2]]
}
