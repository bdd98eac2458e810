//! Adam training loop and checkpoints.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{crystal_types, tape_loss, BlockType, CrystalInput, Model, ModelConfig, ParamStore};
use crate::autodiff::Tape;
use crate::crystal::MolecularCrystal;
use crate::descriptors::{DescriptorScaler, DescriptorVector};
use crate::elements::RadiiTable;
use crate::error::{Error, Result};
use crate::flowmatch::{
    conditional_velocity, flow_loss_terms, interpolate, ot_align, sample_base, FlowSample, LossWeights, PriorSpec,
};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
    pub seed: u64,
    pub loss: LossWeights,
    /// Steps between checkpoints; `0` writes only the final one.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
            seed: 0,
            loss: LossWeights::default(),
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be ≥ 1".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("invalid optimizer settings".into()));
        }
        if !(self.eps > 0.0) || !(self.clip >= 0.0) {
            return Err(Error::InvalidParameter("eps must be positive and clip non-negative".into()));
        }
        if !(self.loss.t_clip < 1.0) {
            return Err(Error::InvalidParameter("t_clip must be below 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn zeros_like(p: &ParamStore) -> Self {
        let z: Vec<_> = p.values.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        Self { m: z.clone(), v: z }
    }
}

/// A training crystal prepared for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub target: FlowSample,
    pub types: Vec<BlockType>,
    pub block_type: Vec<usize>,
}

impl TrainItem {
    pub fn new(c: &MolecularCrystal, scaler: &DescriptorScaler, radii: &RadiiTable) -> Result<Self> {
        let (types, block_type) = crystal_types(c, scaler, radii)?;
        Ok(Self {
            id: c.id.clone(),
            target: FlowSample::from_crystal(c),
            types,
            block_type,
        })
    }

    /// Like [`TrainItem::new`] with the unscaled descriptors of each molecule
    /// type given rather than computed.
    pub fn with_descriptors(
        c: &MolecularCrystal,
        raw: &[DescriptorVector],
        scaler: &DescriptorScaler,
        radii: &RadiiTable,
    ) -> Result<Self> {
        let mut item = Self::new(c, scaler, radii)?;
        if raw.len() != item.types.len() {
            return Err(Error::Shape(format!(
                "{} descriptor rows for {} molecule types",
                raw.len(),
                item.types.len()
            )));
        }
        for (ty, r) in item.types.iter_mut().zip(raw) {
            ty.psi = scaler.transform(r);
        }
        Ok(item)
    }
}

/// Everything needed to resume training or to sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub scaler: DescriptorScaler,
    pub prior: PriorSpec,
    pub train: TrainConfig,
    pub step: usize,
    pub optimizer: AdamState,
    pub loss_trace: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let probe: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(probe)?)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(&self.model, &self.params, self.scaler.clone())
    }
}

pub struct Trainer {
    pub model: Model,
    pub prior: PriorSpec,
    pub config: TrainConfig,
    pub items: Vec<TrainItem>,
    pub step: usize,
    pub optimizer: AdamState,
    pub loss_trace: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Model, prior: PriorSpec, config: TrainConfig, items: Vec<TrainItem>) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        if items.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let optimizer = AdamState::zeros_like(&model.params);
        Ok(Self {
            model,
            prior,
            config,
            items,
            step: 0,
            optimizer,
            loss_trace: Vec::new(),
        })
    }

    pub fn resume(ck: &Checkpoint, items: Vec<TrainItem>) -> Result<Self> {
        let mut t = Self::new(ck.model()?, ck.prior.clone(), ck.train.clone(), items)?;
        if ck.optimizer.m.len() != t.model.params.len() || ck.optimizer.v.len() != t.model.params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        t.step = ck.step;
        t.optimizer = ck.optimizer.clone();
        t.loss_trace = ck.loss_trace.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.model.config.clone(),
            params: self.model.params.clone(),
            scaler: self.model.scaler.clone(),
            prior: self.prior.clone(),
            train: self.config.clone(),
            step: self.step,
            optimizer: self.optimizer.clone(),
            loss_trace: self.loss_trace.clone(),
        }
    }

    /// Noisy states and targets for the batch of `step`; the draw depends only
    /// on the seed and the step number.
    fn draw_batch(&self, step: usize) -> Result<(Vec<usize>, Vec<FlowSample>, Vec<crate::flowmatch::VelocityTarget>)> {
        self.draw_from(&self.items, step)
    }

    fn draw_from(
        &self,
        items: &[TrainItem],
        step: usize,
    ) -> Result<(Vec<usize>, Vec<FlowSample>, Vec<crate::flowmatch::VelocityTarget>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        let picks: Vec<usize> = (0..self.config.batch_size)
            .map(|_| rng.random_range(0..items.len()))
            .collect();
        let mut states = Vec::with_capacity(picks.len());
        let mut targets = Vec::with_capacity(picks.len());
        for &k in &picks {
            let c1 = &items[k].target;
            let t: f64 = rng.random();
            let c0 = sample_base(c1.len(), &c1.chi, &self.prior, &mut rng)?;
            let (c0, _) = ot_align(&c0, c1)?;
            states.push(interpolate(&c0, c1, t)?);
            targets.push(conditional_velocity(&c0, c1, t)?);
        }
        Ok((picks, states, targets))
    }

    /// Loss and parameter gradients for the batch of `step`.
    pub fn loss_and_grads(&self, step: usize) -> Result<(f64, Vec<Array2<f64>>)> {
        let (picks, states, targets) = self.draw_batch(step)?;
        let batch: Vec<CrystalInput> = picks
            .iter()
            .zip(&states)
            .map(|(&k, s)| super::input_for(s, &self.items[k]))
            .collect();
        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape);
        let out = self.model.forward(&mut tape, &p, &batch)?;
        let loss = tape_loss(&mut tape, &out, &batch, &targets, &self.config.loss)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                ids: picks.iter().map(|&k| self.items[k].id.clone()).collect(),
                times: states.iter().map(|s| s.t).collect(),
            });
        }
        let grads = tape
            .backward(loss, p.len())
            .into_iter()
            .zip(&self.model.params.values)
            .map(|(g, v)| g.unwrap_or_else(|| Array2::zeros(v.raw_dim())))
            .collect();
        Ok((value, grads))
    }

    /// Batch-mean weighted lattice, rotation and fractional loss terms on a
    /// batch drawn from `items` as for `step`, without gradients.
    pub fn loss_terms(&self, items: &[TrainItem], step: usize) -> Result<[f64; 3]> {
        if items.is_empty() {
            return Err(Error::InvalidInput("no items to evaluate".into()));
        }
        let (picks, states, targets) = self.draw_from(items, step)?;
        let batch: Vec<CrystalInput> = picks
            .iter()
            .zip(&states)
            .map(|(&k, s)| super::input_for(s, &items[k]))
            .collect();
        let preds = self.model.predict(&batch)?;
        let mut sum = [0.0; 3];
        for ((p, tgt), s) in preds.iter().zip(&targets).zip(&states) {
            let terms = flow_loss_terms(p, tgt, &s.rot, s.t, &self.config.loss)?;
            for k in 0..3 {
                sum[k] += terms[k] / preds.len() as f64;
            }
        }
        Ok(sum)
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_grads(self.step)?;
        let cfg = &self.config;
        if cfg.clip > 0.0 {
            let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
            if norm > cfg.clip {
                let s = cfg.clip / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (k, g) in grads.iter().enumerate() {
            let m = &mut self.optimizer.m[k];
            let v = &mut self.optimizer.v[k];
            let p = &mut self.model.params.values[k];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            });
        }
        self.step += 1;
        self.loss_trace.push(loss);
        Ok(loss)
    }

    /// Runs until `config.steps`, writing checkpoints to `dir` when given.
    pub fn run(&mut self, dir: Option<&Path>) -> Result<()> {
        while self.step < self.config.steps {
            let loss = self.step()?;
            if self.config.log_every > 0 && self.step % self.config.log_every == 0 {
                log::info!("step {} loss {:.4} smoothed {:.4}", self.step, loss, smoothed(&self.loss_trace, 100));
            }
            if let Some(dir) = dir {
                if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                    self.checkpoint().save(dir.join(format!("step_{:06}.json", self.step)))?;
                }
            }
        }
        if let Some(dir) = dir {
            self.checkpoint().save(dir.join("final.json"))?;
        }
        Ok(())
    }
}

/// Mean of the last `window` entries.
pub fn smoothed(trace: &[f64], window: usize) -> f64 {
    let tail = &trace[trace.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}
