//! Invariant message passing over the atoms of one building block.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{rbf_embed, rows_to_array, Mlp};
use super::params::ParamStore;
use crate::autodiff::{Tape, Var};
use crate::crystal::{centroid, BuildingBlock};
use crate::descriptors::{descriptors, DescriptorScaler, MolecularGraph, N_DESCRIPTORS};
use crate::elements::{element_index, vocabulary_size, RadiiTable};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgnnConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Å
    pub cutoff: f64,
    pub n_rbf: usize,
    pub vocab: usize,
}

impl Default for EgnnConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden_dim: 128,
            cutoff: 5.0,
            n_rbf: 32,
            vocab: vocabulary_size(),
        }
    }
}

impl EgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_dim == 0 || self.n_rbf == 0 || self.vocab == 0 {
            return Err(Error::InvalidParameter("EGNN sizes must be positive".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidParameter("EGNN cutoff must be positive".into()));
        }
        Ok(())
    }

    /// Width of the embedding returned by [`Egnn::forward`].
    pub fn output_dim(&self) -> usize {
        self.hidden_dim + N_DESCRIPTORS
    }
}

/// One molecule type as seen by the embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockType {
    pub atoms: Vec<usize>,
    pub coords: Vec<Vector3<f64>>,
    /// Standardized descriptors.
    pub psi: [f64; N_DESCRIPTORS],
}

impl BlockType {
    pub fn new(species: &[String], coords: &[Vector3<f64>], scaler: &DescriptorScaler, radii: &RadiiTable) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::InvalidInput("empty building block".into()));
        }
        let atoms = species.iter().map(|s| element_index(s)).collect::<Result<_>>()?;
        let g = MolecularGraph::from_coords(species, coords, radii)?;
        Ok(Self {
            atoms,
            coords: coords.to_vec(),
            psi: scaler.transform(&descriptors(&g)?),
        })
    }

    pub fn from_block(b: &BuildingBlock, scaler: &DescriptorScaler, radii: &RadiiTable) -> Result<Self> {
        Self::new(&b.species, &b.internal, scaler, radii)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Egnn {
    pub config: EgnnConfig,
    embed: usize,
    message: Vec<Mlp>,
    update: Vec<Mlp>,
    pool: Mlp,
}

impl Egnn {
    pub fn new<R: Rng + ?Sized>(config: &EgnnConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let h = config.hidden_dim;
        let embed = store.xavier("egnn.embed", config.vocab, h, rng);
        let mut message = Vec::new();
        let mut update = Vec::new();
        for l in 0..config.n_layers {
            message.push(Mlp::new(store, &format!("egnn.{l}.msg"), 2 * h + 1 + config.n_rbf, h, h, rng));
            update.push(Mlp::new(store, &format!("egnn.{l}.upd"), 2 * h, h, h, rng));
        }
        let pool = Mlp::new(store, "egnn.pool", h + 1, h, 1, rng);
        Self {
            config: config.clone(),
            embed,
            message,
            update,
            pool,
        }
    }

    /// Embeds each type to a row `ĥ ⊕ ψ`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], types: &[&BlockType]) -> Result<Var> {
        let cfg = &self.config;
        let mut atoms = Vec::new();
        let mut seg = Vec::new();
        let mut radial = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut edge_rows = Vec::new();
        for (t, ty) in types.iter().enumerate() {
            if ty.atoms.is_empty() {
                return Err(Error::InvalidInput("empty building block".into()));
            }
            if let Some(&bad) = ty.atoms.iter().find(|&&a| a >= cfg.vocab) {
                return Err(Error::InvalidInput(format!("atom type {bad} outside vocabulary")));
            }
            let offset = atoms.len();
            let c = centroid(&ty.coords);
            for (i, x) in ty.coords.iter().enumerate() {
                radial.push(vec![(x - c).norm()]);
                for (j, y) in ty.coords.iter().enumerate() {
                    let d = (x - y).norm();
                    if i != j && d < cfg.cutoff {
                        src.push(offset + i);
                        dst.push(offset + j);
                        let mut row = vec![d * d];
                        row.extend(rbf_embed(d, cfg.cutoff, cfg.n_rbf));
                        edge_rows.push(row);
                    }
                }
            }
            atoms.extend_from_slice(&ty.atoms);
            seg.extend(std::iter::repeat_n(t, ty.atoms.len()));
        }
        let n = atoms.len();
        let hd = cfg.hidden_dim;
        let edge = tape.constant(rows_to_array(&edge_rows, 1 + cfg.n_rbf));
        let mut h = tape.gather(p[self.embed], &atoms);
        for (msg, upd) in self.message.iter().zip(&self.update) {
            let agg = if src.is_empty() {
                tape.constant(Array2::zeros((n, hd)))
            } else {
                let hi = tape.gather(h, &src);
                let hj = tape.gather(h, &dst);
                let input = tape.concat(&[hi, hj, edge]);
                let m = msg.apply(tape, p, input);
                tape.scatter_add(m, &src, n)
            };
            let input = tape.concat(&[h, agg]);
            h = upd.apply(tape, p, input);
        }
        let r = tape.constant(rows_to_array(&radial, 1));
        let input = tape.concat(&[h, r]);
        let logits = self.pool.apply(tape, p, input);
        let w = tape.segment_softmax(logits, &seg);
        let ones = tape.constant(Array2::ones((1, hd)));
        let wide = tape.matmul(w, ones);
        let weighted = tape.mul(wide, h);
        let pooled = tape.scatter_add(weighted, &seg, types.len());
        let psi: Vec<Vec<f64>> = types.iter().map(|t| t.psi.to_vec()).collect();
        let psi = tape.constant(rows_to_array(&psi, N_DESCRIPTORS));
        Ok(tape.concat(&[pooled, psi]))
    }
}
