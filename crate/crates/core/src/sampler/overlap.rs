//! Monte Carlo overlap of molecular ellipsoids.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::crystal::{covariance, sorted_eigen, MolecularCrystal};

/// Padding (Å) added to every ellipsoid semi-axis.
pub const ELLIPSOID_PADDING: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub centre: Vector3<f64>,
    /// Columns are the principal axes.
    pub axes: Matrix3<f64>,
    pub semi: [f64; 3],
}

impl Ellipsoid {
    /// Principal axes of the point cloud with semi-lengths `2√λ + padding`.
    pub fn from_points(points: &[Vector3<f64>], padding: f64) -> Self {
        let centre = crate::crystal::centroid(points);
        let (axes, lambda) = sorted_eigen(&covariance(points));
        Self {
            centre,
            axes,
            semi: lambda.map(|l| 2.0 * l.max(0.0).sqrt() + padding),
        }
    }

    pub fn sphere(centre: Vector3<f64>, r: f64) -> Self {
        Self {
            centre,
            axes: Matrix3::identity(),
            semi: [r; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi.iter().product::<f64>()
    }

    pub fn max_semi(&self) -> f64 {
        self.semi.iter().copied().fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        let local = self.axes.transpose() * (x - self.centre);
        (0..3).map(|k| (local[k] / self.semi[k]).powi(2)).sum::<f64>() <= 1.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let dir = loop {
            let g = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let n: f64 = g.norm();
            if n > 1e-12 {
                break g / n;
            }
        };
        let r = rng.random::<f64>().cbrt();
        let local = Vector3::new(dir.x * self.semi[0], dir.y * self.semi[1], dir.z * self.semi[2]) * r;
        self.centre + self.axes * local
    }
}

/// Fraction of the smaller ellipsoid's volume inside the other one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapEstimate {
    pub fraction: f64,
    pub std_error: f64,
}

pub fn ellipsoid_overlap<R: Rng + ?Sized>(a: &Ellipsoid, b: &Ellipsoid, n_mc: usize, rng: &mut R) -> OverlapEstimate {
    if (a.centre - b.centre).norm() > a.max_semi() + b.max_semi() || n_mc == 0 {
        return OverlapEstimate {
            fraction: 0.0,
            std_error: 0.0,
        };
    }
    let (small, large) = if a.volume() <= b.volume() { (a, b) } else { (b, a) };
    let hits = (0..n_mc).filter(|_| large.contains(&small.sample(rng))).count();
    let p = hits as f64 / n_mc as f64;
    OverlapEstimate {
        fraction: p,
        std_error: (p * (1.0 - p) / n_mc as f64).sqrt(),
    }
}

/// Largest overlap between any two distinct molecules of the crystal,
/// including periodic images.
pub fn max_overlap<R: Rng + ?Sized>(c: &MolecularCrystal, n_mc: usize, rng: &mut R) -> OverlapEstimate {
    let ells: Vec<Ellipsoid> = c
        .blocks
        .iter()
        .map(|b| {
            let origin = c.lattice.to_cartesian(b.centroid_frac.coords());
            let pts: Vec<Vector3<f64>> = b.posed().iter().map(|x| x + origin).collect();
            Ellipsoid::from_points(&pts, ELLIPSOID_PADDING)
        })
        .collect();
    let mut worst = OverlapEstimate {
        fraction: 0.0,
        std_error: 0.0,
    };
    for i in 0..ells.len() {
        for j in i..ells.len() {
            for a in -1..=1 {
                for b in -1..=1 {
                    for k in -1..=1 {
                        if i == j && (a, b, k) == (0, 0, 0) {
                            continue;
                        }
                        let shift = c.lattice.to_cartesian(&Vector3::new(a as f64, b as f64, k as f64));
                        let mut other = ells[j];
                        other.centre += shift;
                        let est = ellipsoid_overlap(&ells[i], &other, n_mc, rng);
                        if est.fraction > worst.fraction {
                            worst = est;
                        }
                    }
                }
            }
        }
    }
    worst
}
