//! Flow matching on lattice × torus × SO(3): base distribution, geodesic
//! interpolants, conditional velocities, the training loss and χ-grouped
//! optimal-transport coupling.

mod hungarian;
mod prior;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::crystal::MolecularCrystal;
use crate::error::{Error, Result};
use crate::manifold::{geodesic_distance_so3, log_at, so3_geodesic, torus_displacement};
use crate::{FracPoint, Lattice, Rotation};

pub use hungarian::{assignment_cost, hungarian};
pub use prior::{
    chi_flip, fit_lattice_prior, sample_base, sample_lattice, uniform_rotation, PriorSpec,
    RotationPrior,
};

/// A point on the product manifold at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub lattice: Lattice,
    pub frac: Vec<FracPoint>,
    pub rot: Vec<Rotation>,
    pub chi: Vec<u8>,
    pub t: f64,
}

impl FlowSample {
    /// The data endpoint (`t = 1`) of a decomposed crystal.
    pub fn from_crystal(c: &MolecularCrystal) -> Self {
        Self {
            lattice: c.lattice,
            frac: c.blocks.iter().map(|b| b.centroid_frac).collect(),
            rot: c.blocks.iter().map(|b| b.rotation).collect(),
            chi: c.blocks.iter().map(|b| b.chi).collect(),
            t: 1.0,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frac.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frac.is_empty()
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() || self.rot.len() != other.rot.len() {
            return Err(Error::Shape(format!(
                "block counts differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.chi != other.chi {
            return Err(Error::InvalidInput("χ flags differ between endpoints".into()));
        }
        Ok(())
    }

    /// Applies a block permutation: entry `k` of the result is block `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            lattice: self.lattice,
            frac: perm.iter().map(|&k| self.frac[k]).collect(),
            rot: perm.iter().map(|&k| self.rot[k]).collect(),
            chi: perm.iter().map(|&k| self.chi[k]).collect(),
            t: self.t,
        }
    }
}

/// Per-modality velocity targets plus the denoised endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityTarget {
    pub u_l: Matrix3<f64>,
    pub u_f: Vec<Vector3<f64>>,
    /// Axis-angle vectors of `log_{R_t}(R₁) / (1 − t)`, body frame.
    pub u_r: Vec<Vector3<f64>>,
    pub l1: Lattice,
    pub r1: Vec<Rotation>,
}

/// Geodesic interpolant between `c0` and `c1` at time `t`.
pub fn interpolate(c0: &FlowSample, c1: &FlowSample, t: f64) -> Result<FlowSample> {
    c0.check_pair(c1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(FlowSample { t, ..c0.clone() });
    }
    let l = c0.lattice.matrix() * (1.0 - t) + c1.lattice.matrix() * t;
    let frac = c0
        .frac
        .iter()
        .zip(&c1.frac)
        .map(|(f0, f1)| f0.translate(&(torus_displacement(f0, f1) * t)))
        .collect::<Result<Vec<_>>>()?;
    let rot = c0
        .rot
        .iter()
        .zip(&c1.rot)
        .map(|(r0, r1)| so3_geodesic(r0, r1, t))
        .collect();
    Ok(FlowSample {
        lattice: Lattice::new(l)?,
        frac,
        rot,
        chi: c0.chi.clone(),
        t,
    })
}

/// Velocity that carries the current state `xt` to `c1` by time 1.
pub fn velocity_towards(xt: &FlowSample, c1: &FlowSample, t: f64) -> Result<VelocityTarget> {
    xt.check_pair(c1)?;
    if !(t < 1.0) {
        return Err(Error::InvalidParameter(format!("velocity undefined at t = {t}")));
    }
    let s = 1.0 / (1.0 - t);
    Ok(VelocityTarget {
        u_l: (c1.lattice.matrix() - xt.lattice.matrix()) * s,
        u_f: xt
            .frac
            .iter()
            .zip(&c1.frac)
            .map(|(f, f1)| torus_displacement(f, f1) * s)
            .collect(),
        u_r: xt
            .rot
            .iter()
            .zip(&c1.rot)
            .map(|(r, r1)| log_at(r, r1).vector() * s)
            .collect(),
        l1: c1.lattice,
        r1: c1.rot.clone(),
    })
}

/// Conditional target at time `t` on the path from `c0` to `c1`.
///
/// `u_L = L₁ − L₀` and `u_F = torus_displacement(F₀, F₁)` are constant along
/// the path; `u_R = log_{R_t}(R₁)/(1 − t)`.
pub fn conditional_velocity(c0: &FlowSample, c1: &FlowSample, t: f64) -> Result<VelocityTarget> {
    if !(t < 1.0) {
        return Err(Error::InvalidParameter(format!("velocity undefined at t = {t}")));
    }
    let xt = interpolate(c0, c1, t)?;
    let mut v = velocity_towards(&xt, c1, t)?;
    v.u_l = c1.lattice.matrix() - c0.lattice.matrix();
    v.u_f = c0
        .frac
        .iter()
        .zip(&c1.frac)
        .map(|(f0, f1)| torus_displacement(f0, f1))
        .collect();
    Ok(v)
}

/// Loss weights and time clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lattice: f64,
    pub rotation: f64,
    pub frac: f64,
    pub t_clip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lattice: 0.1,
            rotation: 1.0,
            frac: 2.0,
            t_clip: 0.9,
        }
    }
}

/// Network outputs for one crystal.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub l1: Matrix3<f64>,
    pub r1: Vec<Rotation>,
    pub u_f: Vec<Vector3<f64>>,
}

/// Per-crystal loss:
/// `(λ_L‖L̂₁−L₁‖² + λ_R·mean‖log_{R_t}R̂₁ − log_{R_t}R₁‖²) / (1−min(t, t_clip))²
///  + λ_F·mean‖û_F − u_F‖²`.
pub fn flow_loss(
    pred: &Prediction,
    target: &VelocityTarget,
    r_t: &[Rotation],
    t: f64,
    w: &LossWeights,
) -> Result<f64> {
    Ok(flow_loss_terms(pred, target, r_t, t, w)?.iter().sum())
}

/// The weighted lattice, rotation and fractional terms of [`flow_loss`].
pub fn flow_loss_terms(
    pred: &Prediction,
    target: &VelocityTarget,
    r_t: &[Rotation],
    t: f64,
    w: &LossWeights,
) -> Result<[f64; 3]> {
    let n = r_t.len();
    if pred.r1.len() != n || pred.u_f.len() != n || target.u_f.len() != n || target.r1.len() != n {
        return Err(Error::Shape("prediction and target block counts differ".into()));
    }
    let denom = (1.0 - t.min(w.t_clip)).powi(2);
    let lat = (pred.l1 - target.l1.matrix()).norm_squared();
    let mut rot = 0.0;
    let mut frac = 0.0;
    for k in 0..n {
        let a = log_at(&r_t[k], &pred.r1[k]);
        let b = log_at(&r_t[k], &target.r1[k]);
        rot += (a.vector() - b.vector()).norm_squared() / n as f64;
        frac += (pred.u_f[k] - target.u_f[k]).norm_squared() / n as f64;
    }
    Ok([w.lattice * lat / denom, w.rotation * rot / denom, w.frac * frac])
}

/// OT cost between two blocks: squared torus distance plus squared
/// normalised geodesic angle.
pub fn ot_cost(f0: &FracPoint, r0: &Rotation, f1: &FracPoint, r1: &Rotation) -> f64 {
    torus_displacement(f0, f1).norm_squared()
        + (geodesic_distance_so3(r0, r1) / std::f64::consts::PI).powi(2)
}

/// Permutes the blocks of `c0` within each χ group to minimise the summed
/// [`ot_cost`] against `c1`. Returns the aligned sample and the permutation
/// (`aligned[k] = c0[perm[k]]`).
pub fn ot_align(c0: &FlowSample, c1: &FlowSample) -> Result<(FlowSample, Vec<usize>)> {
    if c0.len() != c1.len() {
        return Err(Error::Shape("block counts differ".into()));
    }
    let mut a = c0.chi.clone();
    let mut b = c1.chi.clone();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::InvalidInput("χ multisets differ".into()));
    }
    let mut perm = vec![usize::MAX; c0.len()];
    for chi in [0u8, 1] {
        let src: Vec<usize> = (0..c0.len()).filter(|&i| c0.chi[i] == chi).collect();
        let dst: Vec<usize> = (0..c1.len()).filter(|&j| c1.chi[j] == chi).collect();
        // cost[j][i]: data slot j receives prior block i.
        let cost: Vec<Vec<f64>> = dst
            .iter()
            .map(|&j| {
                src.iter()
                    .map(|&i| ot_cost(&c0.frac[i], &c0.rot[i], &c1.frac[j], &c1.rot[j]))
                    .collect()
            })
            .collect();
        for (row, col) in hungarian(&cost).into_iter().enumerate() {
            perm[dst[row]] = src[col];
        }
    }
    Ok((c0.permuted(&perm), perm))
}
