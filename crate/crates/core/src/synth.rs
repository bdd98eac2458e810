//! Synthetic molecules and molecular crystals for tests, demos and toy training.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::crystal::{min_image_cart, AtomicStructure};
use crate::elements::RadiiTable;
use crate::error::{Error, Result};
use crate::manifold::{params_to_lattice, LatticeParams};
use crate::{Lattice, Rotation};

/// A rigid molecule template: species and Cartesian coordinates in Å.
#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub name: &'static str,
    pub species: Vec<String>,
    pub coords: Vec<Vector3<f64>>,
}

fn mol(name: &'static str, atoms: &[(&str, [f64; 3])]) -> Molecule {
    Molecule {
        name,
        species: atoms.iter().map(|a| a.0.to_string()).collect(),
        coords: atoms.iter().map(|a| Vector3::from(a.1)).collect(),
    }
}

impl Molecule {
    pub fn water() -> Self {
        mol(
            "water",
            &[("O", [0.0, 0.0, 0.1173]), ("H", [0.0, 0.7572, -0.4692]), ("H", [0.0, -0.7572, -0.4692])],
        )
    }

    pub fn methane() -> Self {
        let s = 0.6291;
        mol(
            "methane",
            &[
                ("C", [0.0, 0.0, 0.0]),
                ("H", [s, s, s]),
                ("H", [-s, -s, s]),
                ("H", [-s, s, -s]),
                ("H", [s, -s, -s]),
            ],
        )
    }

    pub fn hydrogen_fluoride() -> Self {
        mol("hydrogen fluoride", &[("H", [0.0, 0.0, 0.0]), ("F", [0.917, 0.0, 0.0])])
    }

    pub fn ethanol() -> Self {
        mol(
            "ethanol",
            &[
                ("C", [-1.2197, -0.2133, 0.0]),
                ("C", [0.0145, 0.6655, 0.0]),
                ("O", [1.1980, -0.1210, 0.0]),
                ("H", [-2.1200, 0.4030, 0.0]),
                ("H", [-1.2240, -0.8530, 0.8840]),
                ("H", [-1.2240, -0.8530, -0.8840]),
                ("H", [0.0080, 1.3110, 0.8830]),
                ("H", [0.0080, 1.3110, -0.8830]),
                ("H", [1.9740, 0.4410, 0.0]),
            ],
        )
    }

    pub fn benzene() -> Self {
        let mut atoms = Vec::new();
        for k in 0..6 {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            atoms.push(("C", [1.39 * a.cos(), 1.39 * a.sin(), 0.0]));
        }
        for k in 0..6 {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            atoms.push(("H", [2.48 * a.cos(), 2.48 * a.sin(), 0.0]));
        }
        mol("benzene", &atoms)
    }

    /// Bromochlorofluoromethane, a small chiral molecule.
    pub fn bromochlorofluoromethane() -> Self {
        mol(
            "bromochlorofluoromethane",
            &[
                ("C", [0.0, 0.0, 0.0]),
                ("H", [0.63, 0.63, 0.63]),
                ("F", [-0.78, -0.78, 0.78]),
                ("Cl", [-1.02, 1.02, -1.02]),
                ("Br", [1.12, -1.12, -1.12]),
            ],
        )
    }

    pub fn all() -> Vec<Self> {
        vec![
            Self::water(),
            Self::methane(),
            Self::hydrogen_fluoride(),
            Self::ethanol(),
            Self::benzene(),
            Self::bromochlorofluoromethane(),
        ]
    }

    /// Largest distance from the geometric centre to an atom.
    pub fn radius(&self) -> f64 {
        let c = self.centre();
        self.coords.iter().map(|x| (x - c).norm()).fold(0.0, f64::max)
    }

    pub fn centre(&self) -> Vector3<f64> {
        self.coords.iter().sum::<Vector3<f64>>() / self.coords.len() as f64
    }

    /// Coordinates centred at the origin.
    pub fn centred(&self) -> Vec<Vector3<f64>> {
        let c = self.centre();
        self.coords.iter().map(|x| x - c).collect()
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    crate::flowmatch::uniform_rotation(rng)
}

/// Settings for [`random_crystal`].
#[derive(Clone, Debug)]
pub struct CrystalRecipe {
    pub molecule: Molecule,
    pub z: usize,
    /// Gap (Å) added between molecular spheres when sizing the cell.
    pub gap: f64,
    /// Maximum deviation of cell angles from 90°.
    pub angle_spread: f64,
}

impl CrystalRecipe {
    pub fn new(molecule: Molecule, z: usize) -> Self {
        Self {
            molecule,
            z,
            gap: 2.2,
            angle_spread: 15.0,
        }
    }
}

fn grid_dims(z: usize) -> [usize; 3] {
    let mut best = [z, 1, 1];
    for a in 1..=z {
        for b in 1..=z {
            if z % (a * b) != 0 {
                continue;
            }
            let c = z / (a * b);
            let spread = a.max(b).max(c) - a.min(b).min(c);
            let cur = best.iter().max().unwrap() - best.iter().min().unwrap();
            if spread < cur {
                best = [a, b, c];
            }
        }
    }
    best
}

/// Places `z` randomly oriented copies of a molecule in a random cell.
///
/// A random global fractional shift makes boundary-straddling molecules
/// common. Placements that would create intermolecular bonds are retried.
pub fn random_crystal<R: Rng + ?Sized>(
    rng: &mut R,
    id: impl Into<String>,
    recipe: &CrystalRecipe,
) -> Result<AtomicStructure> {
    if recipe.z == 0 {
        return Err(Error::InvalidParameter("z must be ≥ 1".into()));
    }
    let radii = RadiiTable::default();
    let dims = grid_dims(recipe.z);
    let spacing = 2.0 * recipe.molecule.radius() + recipe.gap + 1.0;
    let base = recipe.molecule.centred();
    let id = id.into();
    for _ in 0..200 {
        let mut ang = || 90.0 + rng.random_range(-recipe.angle_spread..=recipe.angle_spread);
        let (alpha, beta, gamma) = (ang(), ang(), ang());
        let mut len = |n: usize| spacing * n as f64 * rng.random_range(1.0..1.15);
        let params = LatticeParams {
            a: len(dims[0]),
            b: len(dims[1]),
            c: len(dims[2]),
            alpha,
            beta,
            gamma,
        };
        let Ok(lattice) = params_to_lattice(&params) else { continue };
        let lattice = lattice.rotated(&random_rotation(rng));
        let shift = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let mut species = Vec::new();
        let mut cart = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let f = Vector3::new(
                        (i as f64 + 0.5 + rng.random_range(-0.05..0.05)) / dims[0] as f64,
                        (j as f64 + 0.5 + rng.random_range(-0.05..0.05)) / dims[1] as f64,
                        (k as f64 + 0.5 + rng.random_range(-0.05..0.05)) / dims[2] as f64,
                    ) + shift;
                    let origin = lattice.to_cartesian(&f);
                    let r = random_rotation(rng);
                    for (x, el) in base.iter().zip(&recipe.molecule.species) {
                        cart.push(origin + r.apply(x));
                        species.push(el.clone());
                    }
                }
            }
        }
        let s = AtomicStructure::new(id.clone(), species, cart, lattice)?;
        if intermolecular_clear(&s, base.len(), &radii)? {
            return Ok(s);
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not place {} × {} without contacts",
        recipe.z, recipe.molecule.name
    )))
}

/// True when no atom of one molecule is within bonding range of another
/// molecule (including periodic images of itself).
fn intermolecular_clear(s: &AtomicStructure, m: usize, radii: &RadiiTable) -> Result<bool> {
    let frac = s.frac();
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            if i / m == j / m {
                continue;
            }
            let d = min_image_cart(&s.lattice, &(frac[j] - frac[i])).norm();
            if d <= radii.cutoff(&s.species[i], &s.species[j])? + 0.2 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A Z = 2 crystal whose second molecule is the inversion image of the first.
pub fn inversion_pair<R: Rng + ?Sized>(rng: &mut R, molecule: &Molecule) -> Result<AtomicStructure> {
    let spacing = 2.0 * molecule.radius() + 4.0;
    let lattice = Lattice::new(Matrix3::from_diagonal(&Vector3::new(spacing * 2.0, spacing, spacing)))?;
    let r = random_rotation(rng);
    let base = molecule.centred();
    let c1 = lattice.to_cartesian(&Vector3::new(0.25, 0.5, 0.5));
    let c2 = lattice.to_cartesian(&Vector3::new(0.75, 0.5, 0.5));
    let mut species = Vec::new();
    let mut cart = Vec::new();
    for (x, el) in base.iter().zip(&molecule.species) {
        cart.push(c1 + r.apply(x));
        species.push(el.clone());
    }
    for (x, el) in base.iter().zip(&molecule.species) {
        cart.push(c2 - r.apply(x));
        species.push(el.clone());
    }
    AtomicStructure::new(format!("{}-inversion", molecule.name), species, cart, lattice)
}

/// A mixed corpus cycling through the built-in molecules with Z in 1..=4.
pub fn corpus<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<Vec<AtomicStructure>> {
    let mols = Molecule::all();
    (0..n)
        .map(|k| {
            let recipe = CrystalRecipe::new(mols[k % mols.len()].clone(), 1 + k % 4);
            random_crystal(rng, format!("synth-{k:04}"), &recipe)
        })
        .collect()
}
