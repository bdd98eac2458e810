//! Rigid-body generative modelling of molecular crystals: geometry on the
//! lattice × torus × SO(3) product manifold, decomposition of all-atom
//! structures into building blocks, flow matching, sampling and evaluation.

pub mod autodiff;
pub mod crystal;
pub mod descriptors;
pub mod elements;
pub mod error;
pub mod evalmetrics;
pub mod flowmatch;
pub mod io;
pub mod manifold;
pub mod net;
pub mod sampler;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Lattice = manifold::Lattice<f64>;
pub type Rotation = manifold::Rotation<f64>;
pub type AxisAngle = manifold::AxisAngle<f64>;
pub type FracPoint = manifold::FracPoint<f64>;
