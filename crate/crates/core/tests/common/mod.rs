#![allow(dead_code)]

use mcflow::crystal::AtomicStructure;
use mcflow::elements::RadiiTable;
use nalgebra::Vector3;
use petgraph::unionfind::UnionFind;

/// Blocks from bonding an explicit 3×3×3 supercell with plain Cartesian
/// distances, folded back onto the original atom indices.
pub fn supercell_components(s: &AtomicStructure, radii: &RadiiTable) -> Vec<Vec<usize>> {
    let n = s.len();
    let l = s.lattice.matrix();
    let mut pos = Vec::with_capacity(27 * n);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let t = l.transpose() * Vector3::new(i as f64, j as f64, k as f64);
                for x in &s.cart {
                    pos.push(x + t);
                }
            }
        }
    }
    let mut uf = UnionFind::<usize>::new(27 * n);
    for a in 0..pos.len() {
        for b in (a + 1)..pos.len() {
            let cut = radii.cutoff(&s.species[a % n], &s.species[b % n]).unwrap();
            if (pos[a] - pos[b]).norm() <= cut {
                uf.union(a, b);
            }
        }
    }
    let mut folded = UnionFind::<usize>::new(n);
    for a in 0..pos.len() {
        for b in (a + 1)..pos.len() {
            if uf.equiv(a, b) {
                folded.union(a % n, b % n);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for a in 0..n {
        let r = folded.find(a);
        let g = *seen.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(a);
    }
    groups
}

/// Six-atom probe with principal axes along x, y, z and `D` signs chosen by
/// perturbing the masses of the +axis atoms.
pub fn axis_probe(signs: [f64; 3]) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let ext = [3.0, 2.0, 1.0];
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    for k in 0..3 {
        for &s in &[1.0, -1.0] {
            let mut v = Vector3::zeros();
            v[k] = s * ext[k];
            coords.push(v);
            masses.push(if s * signs[k] > 0.0 { 14.0 } else { 12.0 });
        }
    }
    (coords, masses)
}

use mcflow::crystal::{decompose, MolecularCrystal};
use mcflow::descriptors::{descriptors, DescriptorScaler, MolecularGraph};
use mcflow::net::{EgnnConfig, McNetConfig, ModelConfig, TrainItem};
use mcflow::synth::{random_crystal, CrystalRecipe, Molecule};
use rand::Rng;

/// A network small enough for fast tests.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        egnn: EgnnConfig {
            n_layers: 2,
            hidden_dim: 16,
            n_rbf: 8,
            ..Default::default()
        },
        mcnet: McNetConfig {
            n_layers: 2,
            hidden_dim: 16,
            fourier_k: 3,
            time_embed_dim: 8,
            chi_embed_dim: 4,
        },
    }
}

pub fn decomposed<R: Rng>(rng: &mut R, molecule: Molecule, z: usize, id: &str) -> MolecularCrystal {
    let s = random_crystal(rng, id, &CrystalRecipe::new(molecule, z)).unwrap();
    decompose(&s, &RadiiTable::default()).unwrap()
}

pub fn fit_scaler(crystals: &[MolecularCrystal]) -> DescriptorScaler {
    let radii = RadiiTable::default();
    let rows: Vec<_> = crystals
        .iter()
        .flat_map(|c| c.blocks.iter())
        .map(|b| descriptors(&MolecularGraph::from_block(b, &radii).unwrap()).unwrap())
        .collect();
    DescriptorScaler::fit(&rows)
}

pub fn items(crystals: &[MolecularCrystal], scaler: &DescriptorScaler) -> Vec<TrainItem> {
    crystals
        .iter()
        .map(|c| TrainItem::new(c, scaler, &RadiiTable::default()).unwrap())
        .collect()
}
