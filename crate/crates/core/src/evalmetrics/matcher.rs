//! Periodic structure matching under lattice, angle and site tolerances.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::niggli::niggli_reduce;
use crate::crystal::AtomicStructure;
use crate::error::{Error, Result};
use crate::flowmatch::hungarian;
use crate::manifold::min_image_scalar;

/// Tolerances for [`structures_match`]. Volumes are never rescaled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchCriteria {
    /// Fractional tolerance on cell lengths.
    pub ltol: f64,
    /// Site tolerance in units of `(V/N)^{1/3}`.
    pub stol: f64,
    /// Angle tolerance in degrees.
    pub atol: f64,
    /// Most anchor translations tried per lattice correspondence.
    pub max_translations: usize,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            ltol: 0.3,
            stol: 0.8,
            atol: 10.0,
            max_translations: 500,
        }
    }
}

impl MatchCriteria {
    pub fn with_stol(stol: f64) -> Self {
        Self {
            stol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ltol > 0.0 && self.stol > 0.0 && self.atol > 0.0) || self.max_translations == 0 {
            return Err(Error::InvalidParameter("match tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched: bool,
    /// Normalized rms displacement of the best accepted alignment.
    pub rms: Option<f64>,
    /// Largest normalized single-site displacement of that alignment.
    pub max_dist: Option<f64>,
    /// Largest fractional length deviation of the chosen correspondence.
    pub length_dev: Option<f64>,
    /// Largest angle deviation (degrees) of the chosen correspondence.
    pub angle_dev: Option<f64>,
    pub correspondences: usize,
    pub translations: usize,
}

fn check(s: &AtomicStructure) -> Result<()> {
    s.validate()?;
    if s.is_empty() {
        return Err(Error::InvalidInput(format!("structure {} has no atoms", s.id)));
    }
    Ok(())
}

/// Rotates a basis into lower-triangular form without reordering it.
fn orient(b: &Matrix3<f64>) -> Matrix3<f64> {
    let a: Vector3<f64> = b.row(0).transpose();
    let bb: Vector3<f64> = b.row(1).transpose();
    let e1 = a.normalize();
    let e2 = (bb - e1 * e1.dot(&bb)).normalize();
    let e3 = e1.cross(&e2);
    let mut m = b * Matrix3::from_columns(&[e1, e2, e3]);
    m[(0, 1)] = 0.0;
    m[(0, 2)] = 0.0;
    m[(1, 2)] = 0.0;
    m
}

fn lengths_angles(m: &Matrix3<f64>) -> ([f64; 3], [f64; 3]) {
    let r: Vec<Vector3<f64>> = (0..3).map(|k| m.row(k).transpose()).collect();
    let ang = |u: &Vector3<f64>, v: &Vector3<f64>| (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos().to_degrees();
    (
        [r[0].norm(), r[1].norm(), r[2].norm()],
        [ang(&r[1], &r[2]), ang(&r[0], &r[2]), ang(&r[0], &r[1])],
    )
}

struct Candidate {
    basis: Matrix3<f64>,
    length_dev: f64,
    angle_dev: f64,
}

/// Bases of `l1`'s lattice built from short lattice vectors whose lengths and
/// angles agree with `target` within tolerance.
fn correspondences(l1: &Matrix3<f64>, target: &Matrix3<f64>, crit: &MatchCriteria) -> Vec<Candidate> {
    let (tl, ta) = lengths_angles(target);
    let mut vecs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for i in -2i32..=2 {
        for j in -2i32..=2 {
            for k in -2i32..=2 {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let n = Vector3::new(i as f64, j as f64, k as f64);
                vecs.push((n, l1.transpose() * n));
            }
        }
    }
    let pick = |len: f64| -> Vec<&(Vector3<f64>, Vector3<f64>)> {
        vecs.iter().filter(|(_, v)| (v.norm() / len - 1.0).abs() <= crit.ltol).collect()
    };
    let (ca, cb, cc) = (pick(tl[0]), pick(tl[1]), pick(tl[2]));
    let mut out = Vec::new();
    for a in &ca {
        for b in &cb {
            for c in &cc {
                let n = Matrix3::from_rows(&[a.0.transpose(), b.0.transpose(), c.0.transpose()]);
                if (n.determinant() - 1.0).abs() > 1e-6 {
                    continue;
                }
                let basis = Matrix3::from_rows(&[a.1.transpose(), b.1.transpose(), c.1.transpose()]);
                let (bl, ba) = lengths_angles(&basis);
                let angle_dev = (0..3).map(|k| (ba[k] - ta[k]).abs()).fold(0.0, f64::max);
                if angle_dev > crit.atol {
                    continue;
                }
                let length_dev = (0..3).map(|k| (bl[k] / tl[k] - 1.0).abs()).fold(0.0, f64::max);
                out.push(Candidate {
                    basis,
                    length_dev,
                    angle_dev,
                });
            }
        }
    }
    out.sort_by(|x, y| (x.length_dev + x.angle_dev / 90.0).total_cmp(&(y.length_dev + y.angle_dev / 90.0)));
    out
}

fn frac_in(basis: &Matrix3<f64>, cart: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let inv_t = basis.try_inverse().expect("unimodular basis").transpose();
    cart.iter().map(|x| (inv_t * x).map(|v| v - v.floor())).collect()
}

fn min_image(d: Vector3<f64>) -> Vector3<f64> {
    d.map(min_image_scalar)
}

/// Fractional displacements after optimal per-species assignment of
/// `f1 + tau` onto `f2`, centred, together with their mean.
fn aligned_displacements(
    f1: &[Vector3<f64>],
    f2: &[Vector3<f64>],
    groups: &BTreeMap<&str, (Vec<usize>, Vec<usize>)>,
    tau: &Vector3<f64>,
    avg_t: &Matrix3<f64>,
) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let mut disp = Vec::with_capacity(f1.len());
    for (i1, i2) in groups.values() {
        let d: Vec<Vec<Vector3<f64>>> = i1
            .iter()
            .map(|&a| i2.iter().map(|&b| min_image(f2[b] - f1[a] - tau)).collect())
            .collect();
        let cost: Vec<Vec<f64>> = d
            .iter()
            .map(|row| row.iter().map(|v| (avg_t * v).norm_squared()).collect())
            .collect();
        for (r, c) in hungarian(&cost).into_iter().enumerate() {
            disp.push(d[r][c]);
        }
    }
    let mean = disp.iter().sum::<Vector3<f64>>() / disp.len() as f64;
    (disp.iter().map(|v| v - mean).collect(), mean)
}

/// Aligns with the anchor translation, then again with the translation
/// shifted by the mean displacement, keeping the better. Cartesian output.
fn best_alignment(
    f1: &[Vector3<f64>],
    f2: &[Vector3<f64>],
    groups: &BTreeMap<&str, (Vec<usize>, Vec<usize>)>,
    tau: &Vector3<f64>,
    avg_t: &Matrix3<f64>,
) -> Vec<Vector3<f64>> {
    let score = |d: &[Vector3<f64>]| d.iter().map(|v| (avg_t * v).norm_squared()).sum::<f64>();
    let (first, mean) = aligned_displacements(f1, f2, groups, tau, avg_t);
    let (second, _) = aligned_displacements(f1, f2, groups, &(tau + mean), avg_t);
    let best = if score(&second) < score(&first) { second } else { first };
    best.iter().map(|v| avg_t * v).collect()
}

/// Compares two periodic structures.
///
/// Both cells are Niggli-reduced. Every basis of the first lattice whose
/// lengths and angles match the second's reduced cell is tried; for each,
/// translations that superpose one atom of the rarest species are enumerated,
/// atoms are assigned per species by the Hungarian method, and the mean
/// displacement is removed. Distances are measured in the average of the two
/// oriented cells and normalized by `(V/N)^{1/3}`. A pair matches when some
/// alignment keeps every site within `stol`; the reported rms is the smallest
/// over such alignments. Both orders are searched, so the result is symmetric.
pub fn structures_match(s1: &AtomicStructure, s2: &AtomicStructure, crit: &MatchCriteria) -> Result<MatchReport> {
    crit.validate()?;
    check(s1)?;
    check(s2)?;
    let ab = one_way(s1, s2, crit)?;
    let ba = one_way(s2, s1, crit)?;
    let mut best = match (ab.rms, ba.rms) {
        (Some(x), Some(y)) if y < x => ba.clone(),
        (None, Some(_)) => ba.clone(),
        _ => ab.clone(),
    };
    best.correspondences = ab.correspondences + ba.correspondences;
    best.translations = ab.translations + ba.translations;
    Ok(best)
}

fn one_way(s1: &AtomicStructure, s2: &AtomicStructure, crit: &MatchCriteria) -> Result<MatchReport> {
    let mut report = MatchReport::default();
    let mut c1 = s1.species.clone();
    let mut c2 = s2.species.clone();
    c1.sort();
    c2.sort();
    if c1 != c2 {
        return Ok(report);
    }
    let r1 = niggli_reduce(&s1.lattice, 1e-5)?;
    let r2 = niggli_reduce(&s2.lattice, 1e-5)?;
    let target = *r2.lattice.matrix();
    let f2 = frac_in(&target, &s2.cart);
    let o2 = orient(&target);

    let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (k, s) in s1.species.iter().enumerate() {
        groups.entry(s.as_str()).or_default().0.push(k);
    }
    for (k, s) in s2.species.iter().enumerate() {
        groups.entry(s.as_str()).or_default().1.push(k);
    }
    let (anchor1, anchor2) = groups
        .values()
        .min_by_key(|(a, _)| a.len())
        .map(|(a, b)| (a.clone(), b[0]))
        .expect("non-empty structure");

    let n = s1.len() as f64;
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for cand in correspondences(r1.lattice.matrix(), &target, crit) {
        report.correspondences += 1;
        let f1 = frac_in(&cand.basis, &s1.cart);
        let avg = (orient(&cand.basis) + o2) * 0.5;
        let norm = (avg.determinant().abs() / n).cbrt();
        let avg_t = avg.transpose();
        for &a in anchor1.iter().take(crit.max_translations) {
            report.translations += 1;
            let tau = min_image(f2[anchor2] - f1[a]);
            let disp = best_alignment(&f1, &f2, &groups, &tau, &avg_t);
            let max = disp.iter().map(|v| v.norm()).fold(0.0, f64::max) / norm;
            if max > crit.stol {
                continue;
            }
            let rms = (disp.iter().map(|v| v.norm_squared()).sum::<f64>() / n).sqrt() / norm;
            if best.is_none_or(|b| rms < b.0) {
                best = Some((rms, max, cand.length_dev, cand.angle_dev));
            }
        }
    }
    if let Some((rms, max, ld, ad)) = best {
        report.matched = true;
        report.rms = Some(rms);
        report.max_dist = Some(max);
        report.length_dev = Some(ld);
        report.angle_dev = Some(ad);
    }
    Ok(report)
}
