//! TOML run configuration. Every key has a default; unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcflow::evalmetrics::MatchCriteria;
use mcflow::net::{ModelConfig, TrainConfig};
use mcflow::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub split: SplitConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub evaluate: EvaluateConfig,
}

/// Inputs and outputs. Unset paths must be given on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Raw structures: `.jsonl` records or `.xyz`/`.extxyz` frames.
    pub dataset: Option<PathBuf>,
    /// Descriptor sidecar keyed by structure id.
    pub descriptors: Option<PathBuf>,
    /// Output directory of `preprocess`; holds `processed.jsonl`.
    pub processed: Option<PathBuf>,
    /// Prior written by `fit-prior`; `train` fits one when absent.
    pub prior: Option<PathBuf>,
    /// Checkpoints and loss trace of `train`.
    pub checkpoints: Option<PathBuf>,
    /// Checkpoint used by `sample`.
    pub checkpoint: Option<PathBuf>,
    /// Output directory of `sample`.
    pub samples: Option<PathBuf>,
    /// Output directory of `evaluate`.
    pub evaluation: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { val: 0.1, test: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Largest per-atom mismatch (Å) when aligning a molecule onto its type.
    pub canon_tol: f64,
    /// Records with a larger roundtrip residual (Å) are quarantined.
    pub max_residual: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            canon_tol: 1e-3,
            max_residual: 1e-6,
        }
    }
}

/// A float that can be switched off with `false`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Toggle {
    Off(bool),
    On(f64),
}

impl Toggle {
    pub fn get(self) -> Result<Option<f64>> {
        match self {
            Toggle::Off(false) => Ok(None),
            Toggle::Off(true) => bail!("use a number or `false`, not `true`"),
            Toggle::On(x) => Ok(Some(x)),
        }
    }

    pub fn from_option(x: Option<f64>) -> Self {
        x.map_or(Toggle::Off(false), Toggle::On)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Split of the processed dataset whose targets are sampled.
    pub split: String,
    pub n_steps: usize,
    pub s_uf: f64,
    pub s_ur: f64,
    pub s_ul: f64,
    pub t_clip: Toggle,
    pub overlap_threshold: Toggle,
    pub n_mc: usize,
    pub max_resample: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            n_samples: 10,
            seed: 0,
            split: "test".into(),
            n_steps: s.n_steps,
            s_uf: s.s_uf,
            s_ur: s.s_ur,
            s_ul: s.s_ul,
            t_clip: Toggle::from_option(s.t_clip),
            overlap_threshold: Toggle::from_option(s.overlap_threshold),
            n_mc: s.n_mc,
            max_resample: s.max_resample,
        }
    }
}

impl SampleConfig {
    pub fn sampler(&self) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            n_steps: self.n_steps,
            s_uf: self.s_uf,
            s_ur: self.s_ur,
            s_ul: self.s_ul,
            t_clip: self.t_clip.get().context("sample.t_clip")?,
            overlap_threshold: self.overlap_threshold.get().context("sample.overlap_threshold")?,
            n_mc: self.n_mc,
            max_resample: self.max_resample,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub criteria: MatchCriteria,
    /// Report one row per stol in `sweep_grid` as well.
    pub sweep: bool,
    pub sweep_grid: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            criteria: MatchCriteria::default(),
            sweep: false,
            sweep_grid: (0..8).map(|k| 0.5 + 0.1 * k as f64).map(|x| (x * 10.0).round() / 10.0).collect(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string(self)?;
        std::fs::write(dir.join("config.effective.toml"), text)?;
        Ok(())
    }
}

/// A required path: the flag value, else the config key, else an error
/// naming both.
pub fn require(flag: Option<PathBuf>, config: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    match flag.or_else(|| config.clone()) {
        Some(p) => Ok(p),
        None => bail!("config key `{key}` is not set (and no flag given)"),
    }
}
