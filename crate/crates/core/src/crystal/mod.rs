//! All-atom structures and their rigid-body decomposition.

mod bonds;
mod decompose;
mod frame;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{FracPoint, Lattice, Rotation};

pub use bonds::{
    identify_building_blocks, min_image_cart, molecular_bonds, periodic_bonds, unwrap_block, Bond,
};
pub(crate) use bonds::components;
pub use decompose::{
    canonicalize_frames, decompose, decompose_with, reconstruct, roundtrip_residual,
    DecomposeOptions,
};
pub use frame::{
    centroid, covariance, equivariant_reference, extract_chi, pca_frame, sorted_eigen, ChiFrame,
};

/// Periodic all-atom structure. Positions are Cartesian rows in Å.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicStructure {
    pub id: String,
    pub species: Vec<String>,
    pub cart: Vec<Vector3<f64>>,
    pub lattice: Lattice,
}

impl AtomicStructure {
    pub fn new(
        id: impl Into<String>,
        species: Vec<String>,
        cart: Vec<Vector3<f64>>,
        lattice: Lattice,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            species,
            cart,
            lattice,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.len() != self.cart.len() {
            return Err(Error::Shape(format!(
                "{} species for {} positions",
                self.species.len(),
                self.cart.len()
            )));
        }
        if self.cart.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidValue("non-finite position".into()));
        }
        Lattice::new(*self.lattice.matrix())?;
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cart.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cart.is_empty()
    }

    pub fn frac(&self) -> Vec<Vector3<f64>> {
        let inv_t = self.lattice.inverse_transpose();
        self.cart.iter().map(|x| inv_t * x).collect()
    }

    /// Chemical formula in Hill order, e.g. `C6H6`.
    pub fn formula(&self) -> String {
        formula(&self.species)
    }
}

pub fn formula(species: &[String]) -> String {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for s in species {
        *counts.entry(s.as_str()).or_default() += 1;
    }
    let mut out = String::new();
    let mut push = |el: &str, n: usize| {
        out.push_str(el);
        if n > 1 {
            out.push_str(&n.to_string());
        }
    };
    let has_c = counts.contains_key("C");
    if has_c {
        push("C", counts["C"]);
        if let Some(&h) = counts.get("H") {
            push("H", h);
        }
    }
    for (el, &n) in &counts {
        if has_c && (*el == "C" || *el == "H") {
            continue;
        }
        push(el, n);
    }
    out
}

/// One rigid molecule: internal PCA-frame coordinates plus its pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub atom_indices: Vec<usize>,
    pub species: Vec<String>,
    pub mass: Vec<f64>,
    /// Zero-mean coordinates in the block's own frame, Å.
    pub internal: Vec<Vector3<f64>>,
    pub centroid_frac: FracPoint,
    pub rotation: Rotation,
    pub chi: u8,
}

impl BuildingBlock {
    #[inline]
    pub fn len(&self) -> usize {
        self.internal.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.internal.is_empty()
    }

    /// World-frame atom positions relative to the centroid.
    pub fn posed(&self) -> Vec<Vector3<f64>> {
        self.internal.iter().map(|x| self.rotation.apply(x)).collect()
    }
}

/// A crystal of `z` rigid building blocks in a standardized lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MolecularCrystal {
    pub id: String,
    pub lattice: Lattice,
    pub blocks: Vec<BuildingBlock>,
}

impl MolecularCrystal {
    #[inline]
    pub fn z(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.blocks.iter().map(BuildingBlock::len).sum()
    }

    /// Lists violated invariants; empty when the crystal is well formed.
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.blocks.is_empty() {
            issues.push("crystal has no blocks".to_string());
        }
        if self.lattice.matrix().determinant() <= 0.0 {
            issues.push("lattice determinant not positive".to_string());
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.centroid_frac.coords().iter().any(|&x| !(0.0..1.0).contains(&x)) {
                issues.push(format!("block {k}: centroid not wrapped"));
            }
            if b.rotation.orthonormality_error() > 1e-6 {
                issues.push(format!("block {k}: rotation not orthonormal"));
            }
            if b.chi > 1 {
                issues.push(format!("block {k}: chi = {}", b.chi));
            }
            if b.species.len() != b.internal.len() || b.mass.len() != b.internal.len() {
                issues.push(format!("block {k}: ragged atom arrays"));
            }
            let c: Vector3<f64> = centroid(&b.internal);
            if c.norm() > 1e-8 {
                issues.push(format!("block {k}: internal coordinates not centred"));
            }
        }
        issues
    }
}
