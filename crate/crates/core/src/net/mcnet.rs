//! Periodic message passing between building blocks and the output heads.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::egnn::BlockType;
use super::layers::{fourier_embed, rows_to_array, time_embed, Linear, Mlp};
use super::params::ParamStore;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flowmatch::{FlowSample, LossWeights, Prediction, VelocityTarget};
use crate::manifold::{axis_angle_to_spherical, log_at, so3_log, torus_displacement};
use crate::{Lattice, Rotation};

/// Bound on the angle of the predicted rotation increment, kept below π so
/// the loss never crosses the logarithm's branch cut.
pub const MAX_INCREMENT: f64 = 0.95 * std::f64::consts::PI;

/// Initial scale of the output heads' last weights, so an untrained network
/// starts close to the identity update.
const HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McNetConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub fourier_k: usize,
    pub time_embed_dim: usize,
    pub chi_embed_dim: usize,
}

impl Default for McNetConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden_dim: 128,
            fourier_k: 8,
            time_embed_dim: 64,
            chi_embed_dim: 16,
        }
    }
}

impl McNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0
            || self.hidden_dim == 0
            || self.fourier_k == 0
            || self.time_embed_dim == 0
            || self.chi_embed_dim == 0
        {
            return Err(Error::InvalidParameter("MCNet sizes must be positive".into()));
        }
        Ok(())
    }

    fn edge_dim(&self) -> usize {
        // Gram (6) + log scale (1) + ψ_FT(ΔF) + ψ_FT(ω), ψ_FT(ρ) + unit vectors (9 + 3)
        19 + 10 * self.fourier_k
    }

    fn kappa_dim(&self) -> usize {
        2 * self.fourier_k
    }
}

/// One crystal of a batch: its current state and the molecule types of its
/// blocks.
#[derive(Clone, Copy, Debug)]
pub struct CrystalInput<'a> {
    pub state: &'a FlowSample,
    pub types: &'a [BlockType],
    /// `types` index of every block.
    pub block_type: &'a [usize],
}

impl CrystalInput<'_> {
    pub fn check(&self) -> Result<()> {
        let n = self.state.len();
        if n == 0 {
            return Err(Error::InvalidInput("crystal has no blocks".into()));
        }
        if self.state.rot.len() != n || self.state.chi.len() != n || self.block_type.len() != n {
            return Err(Error::Shape("ragged crystal input".into()));
        }
        if self.block_type.iter().any(|&k| k >= self.types.len()) {
            return Err(Error::InvalidInput("block type index out of range".into()));
        }
        if self.state.chi.iter().any(|&c| c > 1) {
            return Err(Error::InvalidInput("χ must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Tape handles for the outputs of a batch.
#[derive(Clone, Debug)]
pub struct Outputs {
    /// `B × 9` predicted clean lattices, row-major.
    pub l1: Var,
    /// `N × 9` predicted clean rotations, row-major.
    pub r1: Var,
    /// `N × 3` fractional velocities.
    pub u_f: Var,
    /// Row offset of each crystal's blocks; one extra trailing entry.
    pub offsets: Vec<usize>,
}

fn flat(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn unflat(a: &Array2<f64>, i: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a[[i, 3 * r + c]])
}

/// Lattice features shared by nodes and edges: the six unique Gram entries
/// over `V^{2/3}` and `ln V^{1/3}`.
fn cell_features(l: &Lattice) -> Vec<f64> {
    let g = l.gram();
    let scale = l.volume().cbrt();
    let s2 = scale * scale;
    vec![
        g[(0, 0)] / s2,
        g[(1, 1)] / s2,
        g[(2, 2)] / s2,
        g[(0, 1)] / s2,
        g[(0, 2)] / s2,
        g[(1, 2)] / s2,
        scale.ln(),
    ]
}

/// Fixed part of the relative-rotation embedding, `ψ_FT(ω/2π) ⊕ ψ_FT(ρ/2π)`,
/// and the polar angle κ.
pub fn so3_rel_features(r_rel: &Rotation, k: usize) -> (Vec<f64>, f64) {
    let (omega, kappa, rho) = axis_angle_to_spherical(&so3_log(r_rel));
    let tau = std::f64::consts::TAU;
    let mut out = fourier_embed(omega / tau, k);
    out.extend(fourier_embed(rho / tau, k));
    (out, kappa)
}

#[derive(Clone, Debug, PartialEq)]
pub struct McNet {
    pub config: McNetConfig,
    input: Linear,
    chi_table: usize,
    chi_fuse: Vec<Mlp>,
    message: Vec<Mlp>,
    update: Vec<Mlp>,
    kappa: Mlp,
    head_r: Mlp,
    head_f: Mlp,
    head_l: Mlp,
}

impl McNet {
    pub fn new<R: Rng + ?Sized>(config: &McNetConfig, bb_dim: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let h = config.hidden_dim;
        let node_in = bb_dim + config.time_embed_dim + 9 + 7;
        let input = Linear::new(store, "mcnet.input", node_in, h, rng);
        let chi_table = store.xavier("mcnet.chi_embed", 2, config.chi_embed_dim, rng);
        let kappa = Mlp::new(store, "mcnet.kappa", 1, h, config.kappa_dim(), rng);
        let msg_in = 2 * h + config.edge_dim() + config.kappa_dim();
        let mut chi_fuse = Vec::new();
        let mut message = Vec::new();
        let mut update = Vec::new();
        for l in 0..config.n_layers {
            chi_fuse.push(Mlp::new(store, &format!("mcnet.{l}.chi"), h + config.chi_embed_dim, h, h, rng));
            message.push(Mlp::new(store, &format!("mcnet.{l}.msg"), msg_in, h, h, rng));
            update.push(Mlp::new(store, &format!("mcnet.{l}.upd"), 2 * h, h, h, rng));
        }
        let mut head = |name: &str, out: usize| {
            let m = Mlp::new(store, name, h, h, out, rng);
            store.values[m.l2.w] *= HEAD_INIT_SCALE;
            m
        };
        let head_r = head("mcnet.head_r", 3);
        let head_f = head("mcnet.head_f", 3);
        let head_l = head("mcnet.head_l", 9);
        Self {
            config: config.clone(),
            input,
            chi_table,
            chi_fuse,
            message,
            update,
            kappa,
            head_r,
            head_f,
            head_l,
        }
    }

    /// `h + MLP(h ⊕ embed(χ))` for `N × hidden` rows.
    pub fn chi_fuse(&self, tape: &mut Tape, p: &[Var], layer: usize, h: Var, chi: &[usize]) -> Var {
        let e = tape.gather(p[self.chi_table], chi);
        let input = tape.concat(&[h, e]);
        let d = self.chi_fuse[layer].apply(tape, p, input);
        tape.add(h, d)
    }

    /// Full relative-rotation embedding `ψ_FT(ω/2π) ⊕ ψ_FT(ρ/2π) ⊕ φ(κ)`.
    pub fn so3_rel_embed(&self, store: &ParamStore, r_rel: &Rotation) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let (mut fixed, kappa) = so3_rel_features(r_rel, self.config.fourier_k);
        let k = tape.constant(Array2::from_elem((1, 1), kappa));
        let e = self.kappa.apply(&mut tape, &p, k);
        fixed.extend(tape.value(e).iter());
        fixed
    }

    /// Runs the network on a batch. `bb` holds one embedding row per block,
    /// in batch order.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], bb: Var, batch: &[CrystalInput]) -> Result<Outputs> {
        let cfg = &self.config;
        let mut offsets = vec![0];
        let mut node_rows = Vec::new();
        let mut chi = Vec::new();
        let mut lt_rows = Vec::new();
        let mut rt_rows = Vec::new();
        let mut pool = Vec::new();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut edge_rows = Vec::new();
        let mut kappas = Vec::new();
        for (c, x) in batch.iter().enumerate() {
            x.check()?;
            let s = x.state;
            let n = s.len();
            let o = *offsets.last().unwrap();
            let l = s.lattice.matrix();
            let cell = cell_features(&s.lattice);
            let scale = s.lattice.volume().cbrt();
            let g = s.lattice.gram();
            let time = time_embed(s.t, cfg.time_embed_dim);
            for i in 0..n {
                let mut row = time.clone();
                row.extend(flat(&(l * s.rot[i].matrix() / scale)));
                row.extend_from_slice(&cell);
                node_rows.push(row);
                chi.push(s.chi[i] as usize);
                rt_rows.push(flat(s.rot[i].matrix()).to_vec());
                pool.push((c, o + i, 1.0 / n as f64));
                for j in 0..n {
                    src.push(o + i);
                    dst.push(o + j);
                    let mut e = cell.clone();
                    let raw = s.frac[j].coords() - s.frac[i].coords();
                    for d in 0..3 {
                        e.extend(fourier_embed(raw[d], cfg.fourier_k));
                    }
                    let rel = s.rot[i].transpose().compose(&s.rot[j]);
                    let (feat, kappa) = so3_rel_features(&rel, cfg.fourier_k);
                    e.extend(feat);
                    let m_rl = g * rel.matrix();
                    e.extend(flat(&(m_rl / (m_rl.norm() + 1e-8))));
                    let m_fl: Vector3<f64> = g * torus_displacement(&s.frac[i], &s.frac[j]);
                    e.extend((m_fl / (m_fl.norm() + 1e-8)).iter());
                    edge_rows.push(e);
                    kappas.push(vec![kappa]);
                }
            }
            lt_rows.push(flat(l).to_vec());
            offsets.push(o + n);
        }
        let n_total = *offsets.last().unwrap();
        if tape.value(bb).nrows() != n_total {
            return Err(Error::Shape(format!(
                "{} block embeddings for {n_total} blocks",
                tape.value(bb).nrows()
            )));
        }

        let node = tape.constant(rows_to_array(&node_rows, cfg.time_embed_dim + 16));
        let input = tape.concat(&[bb, node]);
        let mut h = self.input.apply(tape, p, input);

        let edge = tape.constant(rows_to_array(&edge_rows, cfg.edge_dim()));
        let kappa = tape.constant(rows_to_array(&kappas, 1));
        let kappa = self.kappa.apply(tape, p, kappa);
        for layer in 0..cfg.n_layers {
            h = self.chi_fuse(tape, p, layer, h, &chi);
            let hi = tape.gather(h, &src);
            let hj = tape.gather(h, &dst);
            let m_in = tape.concat(&[hi, hj, edge, kappa]);
            let m = self.message[layer].apply(tape, p, m_in);
            let agg = tape.scatter_add(m, &src, n_total);
            let u_in = tape.concat(&[h, agg]);
            let d = self.update[layer].apply(tape, p, u_in);
            h = tape.add(h, d);
        }

        let inc = self.head_r.apply(tape, p, h);
        let inc = tape.ball_squash(inc, MAX_INCREMENT);
        let delta = tape.so3_exp(inc);
        let rt = tape.constant(rows_to_array(&rt_rows, 9));
        let r1 = tape.mat3_mul(rt, delta, false, false);
        let u_f = self.head_f.apply(tape, p, h);

        let mut pm = Array2::zeros((batch.len(), n_total));
        for (c, i, w) in pool {
            pm[[c, i]] = w;
        }
        let pm = tape.constant(pm);
        let mean = tape.matmul(pm, h);
        let phi = self.head_l.apply(tape, p, mean);
        let lt = tape.constant(rows_to_array(&lt_rows, 9));
        let dl = tape.mat3_mul(phi, lt, false, false);
        let l1 = tape.add(lt, dl);
        Ok(Outputs { l1, r1, u_f, offsets })
    }
}

/// Batch-mean flow-matching loss on the tape; equal to the mean of
/// [`crate::flowmatch::flow_loss`] over the crystals.
pub fn tape_loss(
    tape: &mut Tape,
    out: &Outputs,
    batch: &[CrystalInput],
    targets: &[VelocityTarget],
    w: &LossWeights,
) -> Result<Var> {
    if targets.len() != batch.len() {
        return Err(Error::Shape("one target per crystal required".into()));
    }
    let b = batch.len() as f64;
    let n_total = *out.offsets.last().unwrap();
    let mut l_target = Array2::zeros((batch.len(), 9));
    let mut l_weight = Array2::zeros((batch.len(), 9));
    let mut r_target = Array2::zeros((n_total, 3));
    let mut r_weight = Array2::zeros((n_total, 3));
    let mut f_target = Array2::zeros((n_total, 3));
    let mut f_weight = Array2::zeros((n_total, 3));
    let mut rt_rows = Vec::with_capacity(n_total);
    for (c, (x, tgt)) in batch.iter().zip(targets).enumerate() {
        let n = x.state.len();
        if tgt.u_f.len() != n || tgt.r1.len() != n {
            return Err(Error::Shape("target block count differs from state".into()));
        }
        let denom = (1.0 - x.state.t.min(w.t_clip)).powi(2);
        for (k, v) in flat(tgt.l1.matrix()).iter().enumerate() {
            l_target[[c, k]] = *v;
            l_weight[[c, k]] = w.lattice / (denom * b);
        }
        for i in 0..n {
            let row = out.offsets[c] + i;
            let bvec = log_at(&x.state.rot[i], &tgt.r1[i]);
            for d in 0..3 {
                r_target[[row, d]] = bvec.vector()[d];
                r_weight[[row, d]] = w.rotation / (denom * n as f64 * b);
                f_target[[row, d]] = tgt.u_f[i][d];
                f_weight[[row, d]] = w.frac / (n as f64 * b);
            }
            rt_rows.push(flat(x.state.rot[i].matrix()).to_vec());
        }
    }
    let weighted_sq = |tape: &mut Tape, pred: Var, target: Array2<f64>, weight: Array2<f64>| {
        let t = tape.constant(target);
        let d = tape.sub(pred, t);
        let sq = tape.mul(d, d);
        let wt = tape.constant(weight);
        let s = tape.mul(sq, wt);
        tape.sum(s)
    };
    let lat = weighted_sq(tape, out.l1, l_target, l_weight);
    let rt = tape.constant(rows_to_array(&rt_rows, 9));
    let rel = tape.mat3_mul(rt, out.r1, true, false);
    let a = tape.so3_log(rel);
    let rot = weighted_sq(tape, a, r_target, r_weight);
    let frac = weighted_sq(tape, out.u_f, f_target, f_weight);
    let s = tape.add(lat, rot);
    Ok(tape.add(s, frac))
}

/// Reads per-crystal predictions off the tape.
pub fn predictions(tape: &Tape, out: &Outputs) -> Result<Vec<Prediction>> {
    let l1 = tape.value(out.l1);
    let r1 = tape.value(out.r1);
    let uf = tape.value(out.u_f);
    let mut preds = Vec::with_capacity(out.offsets.len() - 1);
    for c in 0..out.offsets.len() - 1 {
        let rows = out.offsets[c]..out.offsets[c + 1];
        let r = rows
            .clone()
            .map(|i| Rotation::project(&unflat(r1, i)))
            .collect::<Result<Vec<_>>>()?;
        let u = rows.map(|i| Vector3::new(uf[[i, 0]], uf[[i, 1]], uf[[i, 2]])).collect();
        preds.push(Prediction {
            l1: unflat(l1, c),
            r1: r,
            u_f: u,
        });
    }
    Ok(preds)
}
