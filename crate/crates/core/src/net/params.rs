//! Named parameter arrays.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Glorot-uniform initialised `rows × cols` weight.
    pub fn xavier<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> usize {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let value = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name, Array2::zeros((rows, cols)))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|k| &self.values[k])
    }

    /// Records every parameter as a leaf on `tape`; the returned handles are
    /// indexed like `values`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().enumerate().map(|(k, v)| tape.param(k, v)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Replaces all values with those of `other`, which must have the same
    /// names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ from the model layout".into()));
        }
        for (k, (mine, theirs)) in self.values.iter().zip(&other.values).enumerate() {
            if mine.dim() != theirs.dim() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[k],
                    theirs.dim(),
                    mine.dim()
                )));
            }
        }
        if !other.all_finite() {
            return Err(Error::InvalidValue("non-finite parameter".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}
