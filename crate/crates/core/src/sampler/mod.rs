//! Euler integration of learned or analytic velocity fields, and generation
//! of all-atom crystals from a conformer.

mod overlap;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crystal::{centroid, extract_chi, reconstruct, AtomicStructure, BuildingBlock, MolecularCrystal};
use crate::descriptors::{DescriptorVector, N_DESCRIPTORS};
use crate::elements::{atomic_mass, RadiiTable};
use crate::error::{Error, Result};
use crate::flowmatch::{sample_base, FlowSample, Prediction, PriorSpec};
use crate::manifold::{log_at, so3_exp, torus_displacement, wrap};
use crate::net::{BlockType, CrystalInput, Model};
use crate::{AxisAngle, Lattice, Rotation};

pub use overlap::{ellipsoid_overlap, max_overlap, Ellipsoid, OverlapEstimate, ELLIPSOID_PADDING};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub s_uf: f64,
    pub s_ur: f64,
    /// Lattice annealing; off by default.
    pub s_ul: f64,
    /// Upper bound on `t` in the derived-velocity denominators; `None`
    /// disables the guard.
    pub t_clip: Option<f64>,
    /// Largest accepted ellipsoid overlap fraction; `None` disables the filter.
    pub overlap_threshold: Option<f64>,
    pub n_mc: usize,
    pub max_resample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            s_uf: 9.0,
            s_ur: 3.0,
            s_ul: 0.0,
            t_clip: Some(0.9),
            overlap_threshold: Some(0.05),
            n_mc: 2048,
            max_resample: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be ≥ 1".into()));
        }
        if [self.s_uf, self.s_ur, self.s_ul].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter("annealing scalings must be ≥ 0".into()));
        }
        if let Some(c) = self.t_clip {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::InvalidParameter("t_clip must lie in [0, 1)".into()));
            }
        }
        if let Some(th) = self.overlap_threshold {
            if !(0.0..=1.0).contains(&th) {
                return Err(Error::InvalidParameter("overlap_threshold must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Anything that can predict the clean state from a noisy one.
pub trait Denoiser {
    fn denoise(&self, state: &FlowSample) -> Result<Prediction>;
}

/// A trained model bound to the molecule types of the blocks being sampled.
pub struct ModelDenoiser<'a> {
    pub model: &'a Model,
    pub types: &'a [BlockType],
    pub block_type: &'a [usize],
}

impl Denoiser for ModelDenoiser<'_> {
    fn denoise(&self, state: &FlowSample) -> Result<Prediction> {
        let input = CrystalInput {
            state,
            types: self.types,
            block_type: self.block_type,
        };
        Ok(self.model.predict(&[input])?.remove(0))
    }
}

/// The exact conditional field of a fixed pair: clean lattice and rotations
/// of `c1`, constant fractional velocity from `c0` to `c1`.
pub struct ConditionalDenoiser {
    pub c1: FlowSample,
    pub u_f: Vec<Vector3<f64>>,
}

impl ConditionalDenoiser {
    pub fn new(c0: &FlowSample, c1: &FlowSample) -> Result<Self> {
        if c0.len() != c1.len() {
            return Err(Error::Shape("block counts differ".into()));
        }
        Ok(Self {
            c1: c1.clone(),
            u_f: c0.frac.iter().zip(&c1.frac).map(|(a, b)| torus_displacement(a, b)).collect(),
        })
    }
}

impl Denoiser for ConditionalDenoiser {
    fn denoise(&self, _state: &FlowSample) -> Result<Prediction> {
        Ok(Prediction {
            l1: *self.c1.lattice.matrix(),
            r1: self.c1.rot.clone(),
            u_f: self.u_f.clone(),
        })
    }
}

fn finite(s: &FlowSample) -> bool {
    s.lattice.matrix().iter().all(|x| x.is_finite())
        && s.frac.iter().all(|f| f.coords().iter().all(|x| x.is_finite()))
        && s.rot.iter().all(|r| r.matrix().iter().all(|x| x.is_finite()))
}

/// Integrates from `c0` at `t = 0` to `t = 1` with `n_steps` Euler steps.
pub fn integrate(field: &dyn Denoiser, c0: &FlowSample, cfg: &SamplerConfig) -> Result<FlowSample> {
    cfg.validate()?;
    if c0.is_empty() {
        return Err(Error::InvalidInput("no blocks to integrate".into()));
    }
    let dt = 1.0 / cfg.n_steps as f64;
    let mut s = c0.clone();
    for step in 0..cfg.n_steps {
        let t = step as f64 * dt;
        s.t = t;
        let fail = |reason: String| Error::Integration { step, reason };
        let pred = field.denoise(&s).map_err(|e| fail(e.to_string()))?;
        if pred.r1.len() != s.len() || pred.u_f.len() != s.len() {
            return Err(fail("prediction has the wrong block count".into()));
        }
        let t_eff = cfg.t_clip.map_or(t, |c| t.min(c));
        let inv = 1.0 / (1.0 - t_eff);
        let u_l = (pred.l1 - s.lattice.matrix()) * inv;
        s.lattice = Lattice::new_unchecked(s.lattice.matrix() + u_l * ((1.0 + cfg.s_ul * t) * dt));
        for k in 0..s.len() {
            let raw = s.frac[k].coords() + pred.u_f[k] * ((1.0 + cfg.s_uf * t) * dt);
            s.frac[k] = wrap(raw).map_err(|e| fail(e.to_string()))?;
            let u_r = log_at(&s.rot[k], &pred.r1[k]).vector() * inv;
            let inc = so3_exp(&AxisAngle::new(u_r * ((1.0 + cfg.s_ur * t) * dt)));
            s.rot[k] = Rotation::project(&(s.rot[k].matrix() * inc.matrix())).map_err(|e| fail(e.to_string()))?;
        }
        if !finite(&s) {
            return Err(fail("non-finite state".into()));
        }
    }
    s.t = 1.0;
    Ok(s)
}

/// What to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub species: Vec<String>,
    /// Conformer coordinates, Å, in any frame.
    pub coords: Vec<Vector3<f64>>,
    /// χ of each of the Z blocks.
    pub chi: Vec<u8>,
    pub n_samples: usize,
    pub seed: u64,
    /// Unscaled descriptors replacing the computed ones.
    #[serde(default)]
    pub descriptors: Option<Vec<f64>>,
}

/// χ patterns: all blocks alike, or half in each state.
pub fn chi_pattern(z: usize, mixed: bool) -> Vec<u8> {
    (0..z).map(|k| if mixed { (k >= z / 2 && z > 1) as u8 } else { 0 }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub index: usize,
    pub n_steps: usize,
    pub s_uf: f64,
    pub s_ur: f64,
    pub overlap: Option<f64>,
    pub resamples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub crystal: MolecularCrystal,
    pub structure: AtomicStructure,
    pub record: SampleRecord,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    pub samples: Vec<GeneratedSample>,
    /// One entry per sample whose resample budget ran out.
    pub warnings: Vec<String>,
}

/// Internal coordinates of the conformer for χ = 0 and χ = 1.
fn conformer_geometry(req: &GenerationRequest) -> Result<[Vec<Vector3<f64>>; 2]> {
    if req.species.is_empty() || req.species.len() != req.coords.len() {
        return Err(Error::InvalidInput("conformer needs matching, non-empty species and coordinates".into()));
    }
    let mass: Vec<f64> = req.species.iter().map(|e| atomic_mass(e)).collect::<Result<_>>()?;
    let c = centroid(&req.coords);
    let centred: Vec<Vector3<f64>> = req.coords.iter().map(|x| x - c).collect();
    let cf = extract_chi(&centred, &mass)?;
    let ft = cf.frame.transpose();
    let own: Vec<Vector3<f64>> = centred.iter().map(|y| ft.apply(y)).collect();
    let mirror: Vec<Vector3<f64>> = own.iter().map(|v| Vector3::new(v.x, v.y, -v.z)).collect();
    Ok(if cf.chi == 0 { [own, mirror] } else { [mirror, own] })
}

fn assemble(
    id: String,
    end: &FlowSample,
    req: &GenerationRequest,
    geom: &[Vec<Vector3<f64>>; 2],
) -> Result<(MolecularCrystal, AtomicStructure)> {
    let lattice = Lattice::new(*end.lattice.matrix())?;
    let mass: Vec<f64> = req.species.iter().map(|e| atomic_mass(e)).collect::<Result<_>>()?;
    let m = req.species.len();
    let blocks = (0..end.len())
        .map(|k| BuildingBlock {
            atom_indices: (k * m..(k + 1) * m).collect(),
            species: req.species.clone(),
            mass: mass.clone(),
            internal: geom[end.chi[k] as usize].clone(),
            centroid_frac: end.frac[k],
            rotation: end.rot[k],
            chi: end.chi[k],
        })
        .collect();
    let crystal = MolecularCrystal { id, lattice, blocks };
    let structure = reconstruct(&crystal);
    Ok((crystal, structure))
}

/// Samples `req.n_samples` crystals. Each sample draws from its own stream of
/// the request seed, so results do not depend on thread scheduling.
pub fn generate(
    model: &Model,
    prior: &PriorSpec,
    req: &GenerationRequest,
    cfg: &SamplerConfig,
    radii: &RadiiTable,
) -> Result<Generation> {
    cfg.validate()?;
    prior.validate()?;
    if req.chi.is_empty() || req.chi.iter().any(|&c| c > 1) {
        return Err(Error::InvalidInput("χ pattern must be non-empty with entries 0 or 1".into()));
    }
    let geom = conformer_geometry(req)?;
    let mut ty = BlockType::new(&req.species, &geom[0], &model.scaler, radii)?;
    if let Some(d) = &req.descriptors {
        let raw: DescriptorVector = d
            .as_slice()
            .try_into()
            .map_err(|_| Error::InvalidInput(format!("expected {N_DESCRIPTORS} descriptors, got {}", d.len())))?;
        ty.psi = model.scaler.transform(&raw);
    }
    let types = [ty];
    let block_type = vec![0; req.chi.len()];
    let field = ModelDenoiser {
        model,
        types: &types,
        block_type: &block_type,
    };
    let results: Vec<Result<std::result::Result<GeneratedSample, String>>> = (0..req.n_samples)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            rng.set_stream(index as u64);
            let id = format!("sample-{index:05}");
            let mut last = String::new();
            for attempt in 0..=cfg.max_resample {
                let c0 = sample_base(req.chi.len(), &req.chi, prior, &mut rng)?;
                let end = match integrate(&field, &c0, cfg) {
                    Ok(end) => end,
                    Err(e) => {
                        last = e.to_string();
                        continue;
                    }
                };
                let (crystal, structure) = match assemble(id.clone(), &end, req, &geom) {
                    Ok(s) => s,
                    Err(e) => {
                        last = e.to_string();
                        continue;
                    }
                };
                let overlap = match cfg.overlap_threshold {
                    Some(th) => {
                        let est = max_overlap(&crystal, cfg.n_mc, &mut rng);
                        if est.fraction > th {
                            last = format!("ellipsoid overlap {:.3}", est.fraction);
                            continue;
                        }
                        Some(est.fraction)
                    }
                    None => None,
                };
                let record = SampleRecord {
                    id,
                    seed: req.seed,
                    index,
                    n_steps: cfg.n_steps,
                    s_uf: cfg.s_uf,
                    s_ur: cfg.s_ur,
                    overlap,
                    resamples: attempt,
                };
                return Ok(Ok(GeneratedSample {
                    crystal,
                    structure,
                    record,
                }));
            }
            Ok(Err(format!("{id}: resample budget exhausted ({last})")))
        })
        .collect();
    let mut out = Generation::default();
    for r in results {
        match r? {
            Ok(s) => out.samples.push(s),
            Err(w) => {
                log::warn!("{w}");
                out.warnings.push(w);
            }
        }
    }
    Ok(out)
}
