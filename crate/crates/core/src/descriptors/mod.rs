//! The 18 auxiliary molecular descriptors ψ and their standardization.
//!
//! Slot layout:
//!
//! | slots | features |
//! |-------|----------|
//! | 0–2   | atom count, heavy-atom count, molecular weight (amu) |
//! | 3–9   | chirality flag, H-bond donors, H-bond acceptors, rotatable bonds, aromatic rings, logP, TPSA (Å²) |
//! | 10–16 | radius of gyration, asphericity, eccentricity, planarity, extents along the three principal axes |
//! | 17    | reserved, always 0 |

mod chem;
mod geom;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::crystal::{molecular_bonds, BuildingBlock};
use crate::elements::{atomic_mass, is_hydrogen, RadiiTable};
use crate::error::{Error, Result};

pub use chem::{chemical_features, smallest_rings, ChemicalFeatures};
pub use geom::geometric_features;

pub const N_DESCRIPTORS: usize = 18;

pub type DescriptorVector = [f64; N_DESCRIPTORS];

/// A molecule as atoms, masses, bonds and coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    pub species: Vec<String>,
    pub masses: Vec<f64>,
    pub bonds: Vec<(usize, usize)>,
    pub coords: Vec<Vector3<f64>>,
}

impl MolecularGraph {
    pub fn new(
        species: Vec<String>,
        masses: Vec<f64>,
        bonds: Vec<(usize, usize)>,
        coords: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let n = species.len();
        if masses.len() != n || coords.len() != n {
            return Err(Error::Shape("ragged molecular graph".into()));
        }
        if bonds.iter().any(|&(i, j)| i >= n || j >= n || i == j) {
            return Err(Error::InvalidInput("bond references an invalid atom".into()));
        }
        Ok(Self {
            species,
            masses,
            bonds,
            coords,
        })
    }

    /// Builds the graph by distance-based bonding.
    pub fn from_coords(species: &[String], coords: &[Vector3<f64>], radii: &RadiiTable) -> Result<Self> {
        let masses = species.iter().map(|e| atomic_mass(e)).collect::<Result<_>>()?;
        let bonds = molecular_bonds(species, coords, radii)?;
        Self::new(species.to_vec(), masses, bonds, coords.to_vec())
    }

    pub fn from_block(b: &BuildingBlock, radii: &RadiiTable) -> Result<Self> {
        Self::from_coords(&b.species, &b.internal, radii)
    }
}

/// `(n_atoms, n_heavy, molecular weight)`.
pub fn basic_features(g: &MolecularGraph) -> Result<(usize, usize, f64)> {
    let heavy = g.species.iter().filter(|e| !is_hydrogen(e)).count();
    let weight = g.species.iter().map(|e| atomic_mass(e)).sum::<Result<f64>>()?;
    Ok((g.species.len(), heavy, weight))
}

pub fn descriptors(g: &MolecularGraph) -> Result<DescriptorVector> {
    let (n, heavy, weight) = basic_features(g)?;
    let c = chemical_features(g);
    let geo = geometric_features(&g.coords);
    let mut psi = [0.0; N_DESCRIPTORS];
    psi[0] = n as f64;
    psi[1] = heavy as f64;
    psi[2] = weight;
    psi[3] = c.chirality_flag as f64;
    psi[4] = c.donors as f64;
    psi[5] = c.acceptors as f64;
    psi[6] = c.rotatable as f64;
    psi[7] = c.aromatic_rings as f64;
    psi[8] = c.logp;
    psi[9] = c.tpsa;
    psi[10..17].copy_from_slice(&geo);
    if psi.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue("non-finite descriptor".into()));
    }
    Ok(psi)
}

/// Per-feature affine standardization fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for DescriptorScaler {
    fn default() -> Self {
        Self {
            mean: vec![0.0; N_DESCRIPTORS],
            std: vec![1.0; N_DESCRIPTORS],
        }
    }
}

impl DescriptorScaler {
    /// Features with standard deviation below 1e-8 get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a DescriptorVector>) -> Self {
        let rows: Vec<&DescriptorVector> = rows.into_iter().collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; N_DESCRIPTORS];
        let mut std = vec![0.0; N_DESCRIPTORS];
        for r in &rows {
            for k in 0..N_DESCRIPTORS {
                mean[k] += r[k] / n;
            }
        }
        for r in &rows {
            for k in 0..N_DESCRIPTORS {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
            if *s < 1e-8 {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, psi: &DescriptorVector) -> DescriptorVector {
        let mut out = [0.0; N_DESCRIPTORS];
        for k in 0..N_DESCRIPTORS {
            out[k] = (psi[k] - self.mean[k]) / self.std[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Molecule;

    fn graph(m: &Molecule) -> MolecularGraph {
        MolecularGraph::from_coords(&m.species, &m.coords, &RadiiTable::default()).unwrap()
    }

    #[test]
    fn basic_examples() {
        let (n, h, w) = basic_features(&graph(&Molecule::water())).unwrap();
        assert_eq!((n, h), (3, 1));
        assert!((w - 18.015).abs() < 0.01);
        let (n, h, w) = basic_features(&graph(&Molecule::methane())).unwrap();
        assert_eq!((n, h), (5, 1));
        assert!((w - 16.043).abs() < 0.01);
        let (n, h, w) = basic_features(&graph(&Molecule::benzene())).unwrap();
        assert_eq!((n, h), (12, 6));
        assert!((w - 78.11).abs() < 0.02);
    }

    #[test]
    fn chemical_examples() {
        let e = chemical_features(&graph(&Molecule::ethanol()));
        assert_eq!((e.donors, e.acceptors, e.rotatable), (1, 1, 0));
        assert!((e.tpsa - 20.23).abs() < 1e-9);
        let b = chemical_features(&graph(&Molecule::benzene()));
        assert_eq!((b.donors, b.acceptors, b.rotatable, b.aromatic_rings), (0, 0, 0, 1));
        let m = chemical_features(&graph(&Molecule::methane()));
        assert_eq!(
            (m.chirality_flag, m.donors, m.acceptors, m.rotatable, m.aromatic_rings),
            (0, 0, 0, 0, 0)
        );
        let c = chemical_features(&graph(&Molecule::bromochlorofluoromethane()));
        assert_eq!(c.chirality_flag, 1);
    }

    #[test]
    fn scaler_constant_feature() {
        let a = [1.0; N_DESCRIPTORS];
        let mut b = [1.0; N_DESCRIPTORS];
        b[2] = 3.0;
        let s = DescriptorScaler::fit([&a, &b]);
        assert_eq!(s.std[0], 1.0);
        assert!((s.std[2] - 1.0).abs() < 1e-12 && (s.mean[2] - 2.0).abs() < 1e-12);
        let t = s.transform(&b);
        assert!((t[2] - 1.0).abs() < 1e-12);
        assert_eq!(t[0], 0.0);
    }
}
