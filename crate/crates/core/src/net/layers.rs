//! Dense layers and fixed feature embeddings.

use ndarray::Array2;
use rand::Rng;

use super::params::ParamStore;
use crate::autodiff::{Tape, Var};

/// `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: store.xavier(format!("{name}.w"), input, output, rng),
            b: store.zeros(format!("{name}.b"), 1, output),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let y = tape.matmul(x, p[self.w]);
        tape.add_row(y, p[self.b])
    }
}

/// Two dense layers with a SiLU in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            l2: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let h = self.l1.apply(tape, p, x);
        let h = tape.silu(h);
        self.l2.apply(tape, p, h)
    }
}

/// Gaussian expansion of a distance on `n_rbf` centres spread evenly over
/// `[0, cutoff]`, width equal to the spacing.
pub fn rbf_embed(d: f64, cutoff: f64, n_rbf: usize) -> Vec<f64> {
    let spacing = if n_rbf > 1 { cutoff / (n_rbf - 1) as f64 } else { cutoff.max(1e-8) };
    (0..n_rbf)
        .map(|k| {
            let mu = spacing * k as f64;
            (-(d - mu).powi(2) / (2.0 * spacing * spacing)).exp()
        })
        .collect()
}

/// `[sin 2πkz, cos 2πkz]` for `k = 1..=K`, sines first.
pub fn fourier_embed(z: f64, k: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(2 * k);
    out.extend((1..=k).map(|j| (tau * j as f64 * z).sin()));
    out.extend((1..=k).map(|j| (tau * j as f64 * z).cos()));
    out
}

/// Sinusoidal embedding of `t ∈ [0, 1]` with frequencies spaced
/// geometrically from 1 to 1000.
pub fn time_embed(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = if half > 1 { 1000f64.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
        out[k] = (t * freq).sin();
        out[half + k] = (t * freq).cos();
    }
    out
}

/// Stacks equal-length rows into an array.
pub fn rows_to_array(rows: &[Vec<f64>], cols: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            a[[i, j]] = v;
        }
    }
    a
}
