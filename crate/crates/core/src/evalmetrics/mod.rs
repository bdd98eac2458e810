//! Structure matching, k-sample match rate and volume deviation.

mod matcher;
mod niggli;

use serde::{Deserialize, Serialize};

use crate::crystal::AtomicStructure;
use crate::error::{Error, Result};

pub use matcher::{structures_match, MatchCriteria, MatchReport};
pub use niggli::{niggli_reduce, Reduced};

/// Outcome for one target of a k-sample evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub id: String,
    pub n_samples: usize,
    pub matched: bool,
    /// Index of the best-matching sample.
    pub best_sample: Option<usize>,
    pub best_rms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRate {
    pub rate: f64,
    pub targets: Vec<TargetResult>,
}

/// Fraction of references matched by at least one of their samples.
/// `predictions[k]` holds the samples for `references[k]` under the same id.
pub fn match_rate(
    predictions: &[(String, Vec<AtomicStructure>)],
    references: &[AtomicStructure],
    crit: &MatchCriteria,
) -> Result<MatchRate> {
    if predictions.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} prediction lists for {} references",
            predictions.len(),
            references.len()
        )));
    }
    let bad: Vec<String> = predictions
        .iter()
        .zip(references)
        .filter(|((id, _), r)| *id != r.id)
        .map(|((id, _), _)| id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::IdMismatch(bad));
    }
    let mut targets = Vec::with_capacity(references.len());
    for ((id, samples), reference) in predictions.iter().zip(references) {
        let mut best: Option<(usize, f64)> = None;
        for (k, s) in samples.iter().enumerate() {
            let rep = structures_match(s, reference, crit)?;
            if let Some(rms) = rep.rms.filter(|_| rep.matched) {
                if best.is_none_or(|b| rms < b.1) {
                    best = Some((k, rms));
                }
            }
        }
        targets.push(TargetResult {
            id: id.clone(),
            n_samples: samples.len(),
            matched: best.is_some(),
            best_sample: best.map(|b| b.0),
            best_rms: best.map(|b| b.1),
        });
    }
    let rate = if targets.is_empty() {
        0.0
    } else {
        targets.iter().filter(|t| t.matched).count() as f64 / targets.len() as f64
    };
    Ok(MatchRate { rate, targets })
}

/// Mean and per-pair `|V_pred − V_ref| / V_ref × 100`.
pub fn volume_rmad(pairs: &[(AtomicStructure, AtomicStructure)]) -> (f64, Vec<f64>) {
    let each: Vec<f64> = pairs
        .iter()
        .map(|(p, r)| (p.lattice.volume() - r.lattice.volume()).abs() / r.lattice.volume() * 100.0)
        .collect();
    let mean = if each.is_empty() {
        0.0
    } else {
        each.iter().sum::<f64>() / each.len() as f64
    };
    (mean, each)
}
