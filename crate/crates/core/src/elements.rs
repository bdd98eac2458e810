//! Element data: standard atomic masses and covalent radii.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (symbol, atomic number, standard atomic mass in amu, covalent radius in Å).
///
/// Radii follow Cordero et al. (2008); carbon uses the sp³ value.
const ELEMENTS: &[(&str, u8, f64, f64)] = &[
    ("H", 1, 1.008, 0.31),
    ("He", 2, 4.0026, 0.28),
    ("Li", 3, 6.94, 1.28),
    ("Be", 4, 9.0122, 0.96),
    ("B", 5, 10.81, 0.84),
    ("C", 6, 12.011, 0.76),
    ("N", 7, 14.007, 0.71),
    ("O", 8, 15.999, 0.66),
    ("F", 9, 18.998, 0.57),
    ("Ne", 10, 20.180, 0.58),
    ("Na", 11, 22.990, 1.66),
    ("Mg", 12, 24.305, 1.41),
    ("Al", 13, 26.982, 1.21),
    ("Si", 14, 28.085, 1.11),
    ("P", 15, 30.974, 1.07),
    ("S", 16, 32.06, 1.05),
    ("Cl", 17, 35.45, 1.02),
    ("Ar", 18, 39.948, 1.06),
    ("K", 19, 39.098, 2.03),
    ("Ca", 20, 40.078, 1.76),
    ("Se", 34, 78.971, 1.20),
    ("Br", 35, 79.904, 1.20),
    ("Kr", 36, 83.798, 1.16),
    ("I", 53, 126.90, 1.39),
    ("Xe", 54, 131.29, 1.40),
];

/// Index of an element in the built-in table; used as the atom-type vocabulary.
pub fn element_index(symbol: &str) -> Result<usize> {
    ELEMENTS
        .iter()
        .position(|e| e.0 == symbol)
        .ok_or_else(|| Error::UnknownElement(symbol.to_string()))
}

/// Number of entries in the atom-type vocabulary.
pub fn vocabulary_size() -> usize {
    ELEMENTS.len()
}

pub fn atomic_mass(symbol: &str) -> Result<f64> {
    element_index(symbol).map(|i| ELEMENTS[i].2)
}

pub fn atomic_number(symbol: &str) -> Result<u8> {
    element_index(symbol).map(|i| ELEMENTS[i].1)
}

pub fn covalent_radius(symbol: &str) -> Result<f64> {
    element_index(symbol).map(|i| ELEMENTS[i].3)
}

pub fn is_hydrogen(symbol: &str) -> bool {
    symbol == "H"
}

/// Per-element bonding radii.
///
/// Two atoms are bonded when `d ≤ bond_scale · (r_i + r_j) + skin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiTable {
    pub radii: BTreeMap<String, f64>,
    #[serde(default = "default_bond_scale")]
    pub bond_scale: f64,
    #[serde(default = "default_skin")]
    pub skin: f64,
}

fn default_bond_scale() -> f64 {
    1.0
}

fn default_skin() -> f64 {
    0.3
}

impl Default for RadiiTable {
    fn default() -> Self {
        let radii = ["H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I"]
            .iter()
            .map(|s| (s.to_string(), covalent_radius(s).unwrap()))
            .collect();
        Self {
            radii,
            bond_scale: default_bond_scale(),
            skin: default_skin(),
        }
    }
}

impl RadiiTable {
    /// Radius for `symbol`, falling back to the built-in covalent radius.
    pub fn radius(&self, symbol: &str) -> Result<f64> {
        match self.radii.get(symbol) {
            Some(&r) => Ok(r),
            None => covalent_radius(symbol),
        }
    }

    pub fn cutoff(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.bond_scale * (self.radius(a)? + self.radius(b)?) + self.skin)
    }

    pub fn validate(&self) -> Result<()> {
        for (el, &r) in &self.radii {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("radius for {el} must be positive")));
            }
        }
        if !(self.bond_scale > 0.0) || !(self.skin >= 0.0) {
            return Err(Error::InvalidInput("bond_scale must be > 0 and skin ≥ 0".into()));
        }
        Ok(())
    }
}
