//! Structure ↔ rigid-body crystal conversion.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use super::{
    centroid, extract_chi, identify_building_blocks, min_image_cart, unwrap_block, AtomicStructure,
    BuildingBlock, MolecularCrystal,
};
use crate::elements::{atomic_mass, RadiiTable};
use crate::error::{Error, Result};
use crate::manifold::standardize_lattice;
use crate::{FracPoint, Rotation};

/// Settings for [`decompose_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposeOptions {
    pub radii: RadiiTable,
    /// Largest per-atom mismatch (Å) tolerated when aligning a block onto its
    /// group's reference geometry.
    pub canon_tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            radii: RadiiTable::default(),
            canon_tol: 1.0e-3,
        }
    }
}

/// Decomposes with the given radii and the default canonicalization tolerance.
pub fn decompose(s: &AtomicStructure, radii: &RadiiTable) -> Result<MolecularCrystal> {
    decompose_with(
        s,
        &DecomposeOptions {
            radii: radii.clone(),
            ..Default::default()
        },
    )
}

pub fn decompose_with(s: &AtomicStructure, opts: &DecomposeOptions) -> Result<MolecularCrystal> {
    s.validate()?;
    let (l_std, q) = standardize_lattice(&s.lattice)?;
    let moved = AtomicStructure {
        id: s.id.clone(),
        species: s.species.clone(),
        cart: s.cart.iter().map(|x| q.apply(x)).collect(),
        lattice: l_std,
    };
    let inv_t = l_std.inverse_transpose();
    let groups = identify_building_blocks(&moved, &opts.radii)?;
    let mut blocks = Vec::with_capacity(groups.len());
    for indices in groups {
        let coords = unwrap_block(&moved, &indices, &opts.radii)?;
        let species: Vec<String> = indices.iter().map(|&a| moved.species[a].clone()).collect();
        let mass: Vec<f64> = species.iter().map(|e| atomic_mass(e)).collect::<Result<_>>()?;
        let c = centroid(&coords);
        let centred: Vec<Vector3<f64>> = coords.iter().map(|x| x - c).collect();
        let cf = extract_chi(&centred, &mass)?;
        let frame_t = cf.frame.transpose();
        let internal = centred.iter().map(|y| frame_t.apply(y)).collect();
        blocks.push(BuildingBlock {
            atom_indices: indices,
            species,
            mass,
            internal,
            centroid_frac: FracPoint::wrap(inv_t * c)?,
            rotation: cf.frame,
            chi: cf.chi,
        });
    }
    canonicalize_frames(&mut blocks, opts.canon_tol)?;
    Ok(MolecularCrystal {
        id: s.id.clone(),
        lattice: l_std,
        blocks,
    })
}

/// Proper rotation `A` minimising `Σ ‖A xᵢ − yᵢ‖²`, with the largest residual.
fn kabsch(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> (Matrix3<f64>, f64) {
    let h = x
        .iter()
        .zip(y)
        .fold(Matrix3::zeros(), |acc, (a, b)| acc + a * b.transpose());
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let d = (v * u.transpose()).determinant().signum();
    let a = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let resid = x
        .iter()
        .zip(y)
        .map(|(p, r)| (a * p - r).norm())
        .fold(0.0, f64::max);
    (a, resid)
}

fn adopt(block: &mut BuildingBlock, reference: &[Vector3<f64>], a: &Matrix3<f64>) -> Result<()> {
    let r = block.rotation.matrix() * a.transpose();
    block.rotation = Rotation::project(&r)?;
    block.internal = reference.to_vec();
    Ok(())
}

fn mirror(x: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    x.iter().map(|v| Vector3::new(v.x, v.y, -v.z)).collect()
}

/// Makes blocks of one molecule type share internal coordinates.
///
/// The first block of each species sequence fixes the type's geometry `G_χ`
/// for its own χ and `G_{1−χ}` as the same coordinates with the third axis
/// negated. Every other block is rotated onto `G_χ`; when that fails it is
/// rotated onto `G_{1−χ}` and relabelled, which happens for molecules whose
/// reference vector lies in a mirror plane.
pub fn canonicalize_frames(blocks: &mut [BuildingBlock], tol: f64) -> Result<()> {
    let mut by_sorted: HashMap<Vec<String>, Vec<String>> = HashMap::new();
    for b in blocks.iter() {
        let mut key = b.species.clone();
        key.sort();
        let seq = by_sorted.entry(key).or_insert_with(|| b.species.clone());
        if *seq != b.species {
            return Err(Error::Canonicalization(format!(
                "blocks of composition {} have different atom orderings",
                super::formula(&b.species)
            )));
        }
    }

    let mut geometry: HashMap<Vec<String>, [Vec<Vector3<f64>>; 2]> = HashMap::new();
    for k in 0..blocks.len() {
        let chi = blocks[k].chi as usize;
        let Some(g) = geometry.get(&blocks[k].species) else {
            let own = blocks[k].internal.clone();
            let pair = if chi == 0 { [own.clone(), mirror(&own)] } else { [mirror(&own), own] };
            geometry.insert(blocks[k].species.clone(), pair);
            continue;
        };
        let (a, resid) = kabsch(&blocks[k].internal, &g[chi]);
        if resid <= tol {
            let target = g[chi].clone();
            adopt(&mut blocks[k], &target, &a)?;
            continue;
        }
        let (a2, resid2) = kabsch(&blocks[k].internal, &g[1 - chi]);
        if resid2 <= tol {
            let target = g[1 - chi].clone();
            adopt(&mut blocks[k], &target, &a2)?;
            blocks[k].chi = (1 - chi) as u8;
            continue;
        }
        return Err(Error::Canonicalization(format!(
            "block {k} deviates from its reference geometry by {:.3e} Å",
            resid.min(resid2)
        )));
    }
    Ok(())
}

/// All-atom structure from a rigid-body crystal; atoms in block order.
pub fn reconstruct(c: &MolecularCrystal) -> AtomicStructure {
    let mut species = Vec::with_capacity(c.n_atoms());
    let mut cart = Vec::with_capacity(c.n_atoms());
    for b in &c.blocks {
        let origin = c.lattice.to_cartesian(b.centroid_frac.coords());
        for (x, el) in b.internal.iter().zip(&b.species) {
            cart.push(origin + b.rotation.apply(x));
            species.push(el.clone());
        }
    }
    AtomicStructure {
        id: c.id.clone(),
        species,
        cart,
        lattice: c.lattice,
    }
}

/// Largest minimum-image distance (Å) between an original atom and its
/// reconstruction, measured in the standardized frame.
pub fn roundtrip_residual(s: &AtomicStructure, c: &MolecularCrystal) -> Result<f64> {
    let (_, q) = standardize_lattice(&s.lattice)?;
    let inv_t = c.lattice.inverse_transpose();
    let mut worst: f64 = 0.0;
    for b in &c.blocks {
        let origin = c.lattice.to_cartesian(b.centroid_frac.coords());
        for (k, &a) in b.atom_indices.iter().enumerate() {
            let original = q.apply(&s.cart[a]);
            let rebuilt = origin + b.rotation.apply(&b.internal[k]);
            let d = min_image_cart(&c.lattice, &(inv_t * (rebuilt - original)));
            worst = worst.max(d.norm());
        }
    }
    Ok(worst)
}
