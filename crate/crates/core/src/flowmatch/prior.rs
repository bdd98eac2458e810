//! Base distribution over lattices, centroids and orientations.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FlowSample;
use crate::error::{Error, Result};
use crate::manifold::{params_to_lattice, LatticeParams};
use crate::{FracPoint, Lattice, Rotation};

const STD_FLOOR: f64 = 1.0e-3;
const MIN_LENGTH: f64 = 0.5;
const MAX_ANGLE_TRIES: usize = 100;

/// How orientations beyond the first block are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationPrior {
    /// One Haar draw; other blocks copy it, with a π flip about the first
    /// axis for blocks whose χ differs from block 0.
    #[default]
    Symmetric,
    /// Every block drawn independently from the Haar measure.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub length_mean: [f64; 3],
    pub length_std: [f64; 3],
    #[serde(default = "default_angle_low")]
    pub angle_low: f64,
    #[serde(default = "default_angle_high")]
    pub angle_high: f64,
    #[serde(default)]
    pub rotation_prior: RotationPrior,
}

fn default_angle_low() -> f64 {
    60.0
}

fn default_angle_high() -> f64 {
    120.0
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length_std.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || self.length_mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidParameter("prior length statistics invalid".into()));
        }
        if !(self.angle_low < self.angle_high && self.angle_low > 0.0 && self.angle_high < 180.0) {
            return Err(Error::InvalidParameter("prior angle bounds invalid".into()));
        }
        Ok(())
    }
}

/// Gaussian fit of sorted cell lengths with the unbiased sample deviation,
/// floored at 1e-3 Å. A single lattice gets the floor.
pub fn fit_lattice_prior<'a>(lattices: impl IntoIterator<Item = &'a Lattice>) -> Result<PriorSpec> {
    let rows: Vec<[f64; 3]> = lattices
        .into_iter()
        .map(|l| {
            let mut v: [f64; 3] = l.lengths().into();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput("cannot fit a prior to an empty dataset".into()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [STD_FLOOR; 3];
    for k in 0..3 {
        mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        if rows.len() > 1 {
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
            std[k] = var.sqrt().max(STD_FLOOR);
        }
    }
    Ok(PriorSpec {
        length_mean: mean,
        length_std: std,
        angle_low: default_angle_low(),
        angle_high: default_angle_high(),
        rotation_prior: RotationPrior::Symmetric,
    })
}

/// Haar-uniform rotation from a normalised 4-component Gaussian (unit quaternion).
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-12 {
            continue;
        }
        let [w, x, y, z] = q.map(|v| v / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        if let Ok(r) = Rotation::project(&m) {
            return r;
        }
    }
}

/// `diag(1, −1, −1)`: a half turn about the first body axis.
pub fn chi_flip() -> Rotation {
    Rotation::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap()
}

pub fn sample_lattice<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Result<Lattice> {
    let mut lengths = [0.0; 3];
    for k in 0..3 {
        let d = Normal::new(prior.length_mean[k], prior.length_std[k])
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        lengths[k] = d.sample(rng).max(MIN_LENGTH);
    }
    lengths.sort_by(f64::total_cmp);
    for _ in 0..MAX_ANGLE_TRIES {
        let mut ang = || rng.random_range(prior.angle_low..=prior.angle_high);
        let p = LatticeParams {
            a: lengths[0],
            b: lengths[1],
            c: lengths[2],
            alpha: ang(),
            beta: ang(),
            gamma: ang(),
        };
        if let Ok(l) = params_to_lattice(&p) {
            return Ok(l);
        }
    }
    Err(Error::PriorSampling(format!(
        "no valid cell angles after {MAX_ANGLE_TRIES} draws"
    )))
}

/// A draw from the base distribution at `t = 0`.
pub fn sample_base<R: Rng + ?Sized>(
    n_blocks: usize,
    chi: &[u8],
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<FlowSample> {
    if n_blocks == 0 {
        return Err(Error::InvalidParameter("n_blocks must be ≥ 1".into()));
    }
    if chi.len() != n_blocks {
        return Err(Error::Shape(format!("{} χ flags for {n_blocks} blocks", chi.len())));
    }
    let lattice = sample_lattice(prior, rng)?;
    let frac = (0..n_blocks)
        .map(|_| FracPoint::wrap(Vector3::new(rng.random(), rng.random(), rng.random())))
        .collect::<Result<Vec<_>>>()?;
    let rot = match prior.rotation_prior {
        RotationPrior::Symmetric => {
            let r_ref = uniform_rotation(rng);
            let flipped = r_ref.compose(&chi_flip());
            chi.iter().map(|&c| if c == chi[0] { r_ref } else { flipped }).collect()
        }
        RotationPrior::Independent => (0..n_blocks).map(|_| uniform_rotation(rng)).collect(),
    };
    Ok(FlowSample {
        lattice,
        frac,
        rot,
        chi: chi.to_vec(),
        t: 0.0,
    })
}
