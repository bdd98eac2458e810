use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mcflow::crystal::{
    decompose_with, formula, reconstruct, roundtrip_residual, AtomicStructure, DecomposeOptions, MolecularCrystal,
};
use mcflow::descriptors::{DescriptorScaler, DescriptorVector, N_DESCRIPTORS};
use mcflow::elements::RadiiTable;
use mcflow::evalmetrics::{match_rate, volume_rmad, MatchCriteria, TargetResult};
use mcflow::flowmatch::{fit_lattice_prior, PriorSpec};
use mcflow::io::{
    formula_split, parse_extxyz, read_all, read_descriptor_sidecar, read_records, write_json, write_records,
    DatasetRecord, DescriptorSource, Header, ProcessedRecord, Split, DATASET_FORMAT, DATASET_SCHEMA,
    EVALUATION_FORMAT, FORMAT_VERSION, PROCESSED_FORMAT, SAMPLES_FORMAT,
};
use mcflow::net::{type_descriptors, Checkpoint, Model, TrainItem, Trainer};
use mcflow::sampler::{chi_pattern, generate, GenerationRequest, SampleRecord, SamplerConfig};
use mcflow::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{require, RunConfig, Toggle};
use crate::{EvaluateArgs, FitPriorArgs, InspectArgs, Outcome, PreprocessArgs, SampleArgs, TrainArgs};

const PRIOR_FORMAT: &str = "mcflow-prior";
const REPORT_FORMAT: &str = "mcflow-report";
const PROCESSED_FILE: &str = "processed.jsonl";

fn is_xyz(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("xyz" | "extxyz"))
}

/// Raw records with a location label for diagnostics.
fn read_raw(path: &Path) -> Result<Vec<(String, mcflow::Result<DatasetRecord>)>> {
    if is_xyz(path) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        return Ok(parse_extxyz(&text, stem)
            .into_iter()
            .enumerate()
            .map(|(k, r)| (format!("frame {k}"), r))
            .collect());
    }
    Ok(read_records::<DatasetRecord>(path, DATASET_FORMAT, true)?
        .into_iter()
        .map(|(line, r)| (format!("line {line}"), r))
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Quarantined {
    id: Option<String>,
    location: String,
    reason: String,
    detail: String,
}

fn reason(e: &Error) -> &'static str {
    match e {
        Error::InvalidLattice(_) => "invalid-lattice",
        Error::UnknownElement(_) => "unknown-element",
        Error::Canonicalization(_) => "canonicalization",
        Error::Parse(_) | Error::Json(_) => "schema",
        Error::Shape(_) | Error::InvalidValue(_) | Error::InvalidInput(_) => "invalid-structure",
        _ => "decomposition",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Diagnostic {
    id: String,
    z: usize,
    roundtrip_residual: f64,
    split: Split,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PreprocessReport {
    format: String,
    format_version: u32,
    input: String,
    records: usize,
    processed: usize,
    quarantined: usize,
    reasons: BTreeMap<String, usize>,
    structures: Vec<Diagnostic>,
}

fn molecule_formula(c: &MolecularCrystal) -> String {
    let mut parts: Vec<String> = c.blocks.iter().map(|b| formula(&b.species)).collect();
    parts.sort();
    parts.dedup();
    parts.join(".")
}

fn process(
    rec: &DatasetRecord,
    supplied: Option<&Vec<f64>>,
    opts: &DecomposeOptions,
    cfg: &RunConfig,
) -> std::result::Result<ProcessedRecord, (&'static str, String)> {
    let err = |e: Error| (reason(&e), e.to_string());
    let s = rec.to_structure().map_err(err)?;
    let c = decompose_with(&s, opts).map_err(err)?;
    let residual = roundtrip_residual(&s, &c).map_err(err)?;
    if residual > cfg.preprocess.max_residual {
        return Err(("roundtrip", format!("roundtrip residual {residual:.3e} Å")));
    }
    let computed = type_descriptors(&c, &opts.radii).map_err(err)?;
    let given = rec.descriptors.as_ref().or(supplied);
    let (descriptors, source) = match given {
        Some(d) => {
            if d.len() != N_DESCRIPTORS || d.iter().any(|x| !x.is_finite()) {
                return Err(("descriptors", format!("expected {N_DESCRIPTORS} finite descriptors")));
            }
            (vec![d.clone(); computed.len()], DescriptorSource::Supplied)
        }
        None => (computed.iter().map(|d| d.to_vec()).collect(), DescriptorSource::Computed),
    };
    let mol = molecule_formula(&c);
    Ok(ProcessedRecord {
        id: rec.id.clone(),
        split: rec.split.unwrap_or_else(|| formula_split(&mol, cfg.split.val, cfg.split.test)),
        formula: mol,
        z: c.z(),
        roundtrip_residual: residual,
        descriptors,
        descriptor_source: source,
        crystal: c,
    })
}

pub fn preprocess(mut cfg: RunConfig, a: PreprocessArgs) -> Result<Outcome> {
    let input = require(a.input, &cfg.paths.dataset, "paths.dataset")?;
    let out = require(a.output, &cfg.paths.processed, "paths.processed")?;
    let sidecar = a.descriptors.or_else(|| cfg.paths.descriptors.clone());
    cfg.paths.dataset = Some(input.clone());
    cfg.paths.processed = Some(out.clone());
    cfg.paths.descriptors = sidecar.clone();

    let raw = read_raw(&input)?;
    let supplied = sidecar.as_ref().map(read_descriptor_sidecar).transpose()?.unwrap_or_default();
    let opts = DecomposeOptions {
        radii: RadiiTable::default(),
        canon_tol: cfg.preprocess.canon_tol,
    };
    let results: Vec<std::result::Result<ProcessedRecord, Quarantined>> = raw
        .par_iter()
        .map(|(loc, rec)| {
            let rec = rec.as_ref().map_err(|e| Quarantined {
                id: None,
                location: loc.clone(),
                reason: reason(e).into(),
                detail: e.to_string(),
            })?;
            process(rec, supplied.get(&rec.id), &opts, &cfg).map_err(|(r, d)| Quarantined {
                id: Some(rec.id.clone()),
                location: loc.clone(),
                reason: r.into(),
                detail: d,
            })
        })
        .collect();

    let mut processed = Vec::new();
    let mut quarantine = Vec::new();
    let mut seen = HashSet::new();
    for (r, (loc, _)) in results.into_iter().zip(&raw) {
        match r {
            Ok(p) if !seen.insert(p.id.clone()) => quarantine.push(Quarantined {
                id: Some(p.id),
                location: loc.clone(),
                reason: "duplicate-id".into(),
                detail: "id already used by an earlier record".into(),
            }),
            Ok(p) => processed.push(p),
            Err(q) => quarantine.push(q),
        }
    }
    for q in &quarantine {
        log::warn!("quarantined {} ({}): {} {}", q.id.as_deref().unwrap_or("?"), q.location, q.reason, q.detail);
    }

    fs::create_dir_all(&out)?;
    write_records(out.join(PROCESSED_FILE), PROCESSED_FORMAT, &processed)?;
    write_records(out.join("quarantine.jsonl"), "mcflow-quarantine", &quarantine)?;
    fs::write(out.join("dataset.schema.json"), DATASET_SCHEMA)?;
    let mut reasons = BTreeMap::new();
    for q in &quarantine {
        *reasons.entry(q.reason.clone()).or_insert(0) += 1;
    }
    let report = PreprocessReport {
        format: REPORT_FORMAT.into(),
        format_version: FORMAT_VERSION,
        input: input.display().to_string(),
        records: raw.len(),
        processed: processed.len(),
        quarantined: quarantine.len(),
        reasons,
        structures: processed
            .iter()
            .map(|p| Diagnostic {
                id: p.id.clone(),
                z: p.z,
                roundtrip_residual: p.roundtrip_residual,
                split: p.split,
            })
            .collect(),
    };
    write_json(out.join("report.json"), &report)?;
    cfg.write_effective(&out)?;
    println!("processed {} of {} records, {} quarantined", processed.len(), raw.len(), quarantine.len());
    if processed.is_empty() {
        bail!("no record could be processed");
    }
    Ok(if quarantine.is_empty() { Outcome::Complete } else { Outcome::Partial })
}

fn load_processed(dir: &Path) -> Result<Vec<ProcessedRecord>> {
    let path = if dir.is_dir() { dir.join(PROCESSED_FILE) } else { dir.to_path_buf() };
    read_all(&path, PROCESSED_FORMAT).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    format: String,
    format_version: u32,
    prior: PriorSpec,
}

fn read_prior(path: &Path) -> Result<PriorSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading prior {}", path.display()))?;
    let f: PriorFile = serde_json::from_str(&text).with_context(|| format!("parsing prior {}", path.display()))?;
    if f.format != PRIOR_FORMAT {
        bail!("{} is not a prior file", path.display());
    }
    if f.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: f.format_version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    f.prior.validate()?;
    Ok(f.prior)
}

fn train_lattice_prior(records: &[ProcessedRecord]) -> Result<PriorSpec> {
    let train: Vec<_> = records.iter().filter(|r| r.split == Split::Train).map(|r| &r.crystal.lattice).collect();
    if train.is_empty() {
        bail!("the processed dataset has no training records");
    }
    Ok(fit_lattice_prior(train)?)
}

pub fn fit_prior(mut cfg: RunConfig, a: FitPriorArgs) -> Result<Outcome> {
    let processed = require(a.processed, &cfg.paths.processed, "paths.processed")?;
    let out = require(a.output, &cfg.paths.prior, "paths.prior")?;
    cfg.paths.processed = Some(processed.clone());
    cfg.paths.prior = Some(out.clone());
    let prior = train_lattice_prior(&load_processed(&processed)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(
        &out,
        &PriorFile {
            format: PRIOR_FORMAT.into(),
            format_version: FORMAT_VERSION,
            prior: prior.clone(),
        },
    )?;
    println!(
        "lattice prior: lengths {:.3?} ± {:.3?} Å",
        prior.length_mean, prior.length_std
    );
    Ok(Outcome::Complete)
}

fn raw_rows(r: &ProcessedRecord) -> Result<Vec<DescriptorVector>> {
    r.descriptors
        .iter()
        .map(|d| {
            d.as_slice()
                .try_into()
                .map_err(|_| anyhow!("{}: descriptor row of length {}", r.id, d.len()))
        })
        .collect()
}

fn items(records: &[&ProcessedRecord], scaler: &DescriptorScaler) -> Result<Vec<TrainItem>> {
    let radii = RadiiTable::default();
    records
        .iter()
        .map(|r| {
            TrainItem::with_descriptors(&r.crystal, &raw_rows(r)?, scaler, &radii)
                .with_context(|| format!("preparing {}", r.id))
        })
        .collect()
}

const TRACE_HEADER: &str = "step,loss,lattice,rotation,frac,val_loss";

/// Rows of an existing trace for steps before `start`.
fn kept_trace(path: &Path, start: usize) -> String {
    let Ok(text) = fs::read_to_string(path) else {
        return String::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s <= start))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<Outcome> {
    let processed = require(a.processed, &cfg.paths.processed, "paths.processed")?;
    let out = require(a.output, &cfg.paths.checkpoints, "paths.checkpoints")?;
    cfg.paths.processed = Some(processed.clone());
    cfg.paths.checkpoints = Some(out.clone());
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let records = load_processed(&processed)?;
    let train_recs: Vec<&ProcessedRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    let val_recs: Vec<&ProcessedRecord> = records.iter().filter(|r| r.split == Split::Val).collect();
    if train_recs.is_empty() {
        bail!("the processed dataset has no training records");
    }

    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let train_items = items(&train_recs, &ck.scaler)?;
            let mut t = Trainer::resume(&ck, train_items)?;
            if let Some(s) = a.steps {
                t.config.steps = s;
            }
            t
        }
        None => {
            let rows: Vec<DescriptorVector> =
                train_recs.iter().map(|r| raw_rows(r)).collect::<Result<Vec<_>>>()?.concat();
            let scaler = DescriptorScaler::fit(&rows);
            let prior_path = a.prior.clone().or_else(|| cfg.paths.prior.clone());
            let prior = match &prior_path {
                Some(p) => read_prior(p)?,
                None => train_lattice_prior(&records)?,
            };
            cfg.paths.prior = prior_path;
            cfg.model.validate()?;
            let model = Model::new(&cfg.model, scaler.clone(), cfg.train.seed)?;
            Trainer::new(model, prior, cfg.train.clone(), items(&train_recs, &scaler)?)?
        }
    };
    let val_items = items(&val_recs, &trainer.model.scaler)?;

    fs::create_dir_all(&out)?;
    let trace_path = out.join("loss_trace.csv");
    let mut trace = String::from(TRACE_HEADER);
    trace.push('\n');
    if a.resume.is_some() {
        trace.push_str(&kept_trace(&trace_path, trainer.step));
    }
    let epoch = train_recs.len().div_ceil(trainer.config.batch_size).max(1);
    let every = trainer.config.checkpoint_every;
    while trainer.step < trainer.config.steps {
        let step = trainer.step;
        let terms = trainer.loss_terms(&trainer.items, step)?;
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e) => {
                trainer.checkpoint().save(out.join("aborted.json"))?;
                return Err(e).context("training aborted; state saved to aborted.json");
            }
        };
        let done = trainer.step;
        let val = if done % epoch == 0 && !val_items.is_empty() {
            let v: f64 = trainer.loss_terms(&val_items, done)?.iter().sum();
            log::info!("epoch {} step {done} validation loss {v:.4}", done / epoch);
            format!("{v}")
        } else {
            String::new()
        };
        let _ = writeln!(trace, "{done},{loss},{},{},{},{val}", terms[0], terms[1], terms[2]);
        if trainer.config.log_every > 0 && done % trainer.config.log_every == 0 {
            log::info!("step {done} loss {loss:.4}");
        }
        if every > 0 && done % every == 0 {
            trainer.checkpoint().save(out.join(format!("step_{done:06}.json")))?;
        }
    }
    trainer.checkpoint().save(out.join("final.json"))?;
    fs::write(&trace_path, trace)?;
    cfg.train = trainer.config.clone();
    cfg.write_effective(&out)?;
    let last = trainer.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!("trained to step {} (last loss {last:.4})", trainer.step);
    Ok(Outcome::Complete)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleLine {
    pub target_id: String,
    pub sample_id: String,
    pub record: SampleRecord,
    pub structure: DatasetRecord,
    pub crystal: MolecularCrystal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TargetMeta {
    id: String,
    z: usize,
    chi: Vec<u8>,
    seed: u64,
    generated: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleMeta {
    format: String,
    format_version: u32,
    checkpoint: String,
    checkpoint_step: usize,
    sampler: SamplerConfig,
    n_samples: usize,
    seed: u64,
    chi_mode: String,
    targets: Vec<TargetMeta>,
    warnings: Vec<String>,
}

fn split_filter(name: &str) -> Result<Option<Split>> {
    Ok(match name {
        "all" => None,
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        other => bail!("unknown split `{other}` (train, val, test or all)"),
    })
}

pub fn sample(mut cfg: RunConfig, a: SampleArgs) -> Result<Outcome> {
    let ck_path = require(a.checkpoint, &cfg.paths.checkpoint, "paths.checkpoint")?;
    let processed = require(a.processed, &cfg.paths.processed, "paths.processed")?;
    let out = require(a.output, &cfg.paths.samples, "paths.samples")?;
    cfg.paths.checkpoint = Some(ck_path.clone());
    cfg.paths.processed = Some(processed.clone());
    cfg.paths.samples = Some(out.clone());
    let s = &mut cfg.sample;
    if let Some(v) = a.n_samples {
        s.n_samples = v;
    }
    if let Some(v) = a.steps {
        s.n_steps = v;
    }
    if let Some(v) = a.s_uf {
        s.s_uf = v;
    }
    if let Some(v) = a.s_ur {
        s.s_ur = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.overlap_threshold {
        s.overlap_threshold = Toggle::On(v);
    }
    if a.no_overlap_filter {
        s.overlap_threshold = Toggle::Off(false);
    }
    if let Some(v) = &a.split {
        s.split = v.clone();
    }
    let sampler = cfg.sample.sampler()?;

    let ck = Checkpoint::load(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    let model = ck.model()?;
    let records = load_processed(&processed)?;
    let split = split_filter(&cfg.sample.split)?;
    let targets: Vec<&ProcessedRecord> = if a.ids.is_empty() {
        records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect()
    } else {
        let by_id: HashMap<&str, &ProcessedRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let missing: Vec<String> = a.ids.iter().filter(|i| !by_id.contains_key(i.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::IdMismatch(missing).into());
        }
        a.ids.iter().map(|i| by_id[i.as_str()]).collect()
    };
    if targets.is_empty() {
        bail!("no targets selected");
    }

    let radii = RadiiTable::default();
    let mut lines = Vec::new();
    let mut metas = Vec::new();
    let mut warnings = Vec::new();
    for (k, t) in targets.iter().enumerate() {
        let first = &t.crystal.blocks[0];
        if t.crystal.blocks.iter().any(|b| b.species != first.species) {
            warnings.push(format!("{}: several molecule types; skipped", t.id));
            continue;
        }
        let z = a.z.unwrap_or(t.z);
        let chi = match a.chi.as_str() {
            "target" if z == t.z => t.crystal.blocks.iter().map(|b| b.chi).collect(),
            "target" => bail!("--chi target needs the target's Z; use uniform or mixed with --z"),
            "uniform" => chi_pattern(z, false),
            "mixed" => chi_pattern(z, true),
            other => bail!("unknown χ pattern `{other}`"),
        };
        let seed = cfg.sample.seed.wrapping_add(k as u64);
        let req = GenerationRequest {
            species: first.species.clone(),
            coords: first.internal.clone(),
            chi: chi.clone(),
            n_samples: cfg.sample.n_samples,
            seed,
            descriptors: (t.descriptor_source == DescriptorSource::Supplied).then(|| t.descriptors[0].clone()),
        };
        let generation = generate(&model, &ck.prior, &req, &sampler, &radii).with_context(|| format!("sampling {}", t.id))?;
        warnings.extend(generation.warnings.iter().map(|w| format!("{}: {w}", t.id)));
        metas.push(TargetMeta {
            id: t.id.clone(),
            z,
            chi,
            seed,
            generated: generation.samples.len(),
        });
        for g in generation.samples {
            let sample_id = format!("{}/{}", t.id, g.record.id);
            let mut structure = DatasetRecord::from_structure(&g.structure);
            structure.id = sample_id.clone();
            let mut crystal = g.crystal;
            crystal.id = sample_id.clone();
            lines.push(SampleLine {
                target_id: t.id.clone(),
                sample_id,
                record: g.record,
                structure,
                crystal,
            });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    fs::create_dir_all(&out)?;
    write_records(out.join("samples.jsonl"), SAMPLES_FORMAT, &lines)?;
    write_json(
        out.join("metadata.json"),
        &SampleMeta {
            format: "mcflow-sample-metadata".into(),
            format_version: FORMAT_VERSION,
            checkpoint: ck_path.display().to_string(),
            checkpoint_step: ck.step,
            sampler,
            n_samples: cfg.sample.n_samples,
            seed: cfg.sample.seed,
            chi_mode: a.chi.clone(),
            targets: metas,
            warnings: warnings.clone(),
        },
    )?;
    cfg.write_effective(&out)?;
    println!("wrote {} samples for {} targets", lines.len(), targets.len());
    Ok(if warnings.is_empty() { Outcome::Complete } else { Outcome::Partial })
}

/// Structures of a dataset, processed or samples file as `(group id, split,
/// structure)`; samples are grouped by target.
fn load_structures(path: &Path) -> Result<Vec<(String, Option<Split>, AtomicStructure)>> {
    if is_xyz(path) {
        return read_raw(path)?
            .into_iter()
            .map(|(loc, r)| {
                let r = r.with_context(|| format!("{}: {loc}", path.display()))?;
                Ok((r.id.clone(), r.split, r.to_structure()?))
            })
            .collect();
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let format = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<Header>(l).ok())
        .map(|h| h.format)
        .unwrap_or_else(|| DATASET_FORMAT.to_string());
    let ctx = || format!("reading {}", path.display());
    Ok(match format.as_str() {
        DATASET_FORMAT => read_records::<DatasetRecord>(path, DATASET_FORMAT, true)?
            .into_iter()
            .map(|(line, r)| {
                let r = r.map_err(|e| anyhow!("line {line}: {e}"))?;
                Ok((r.id.clone(), r.split, r.to_structure()?))
            })
            .collect::<Result<_>>()
            .with_context(ctx)?,
        PROCESSED_FORMAT => read_all::<ProcessedRecord>(path, PROCESSED_FORMAT)
            .with_context(ctx)?
            .into_iter()
            .map(|r| (r.id.clone(), Some(r.split), reconstruct(&r.crystal)))
            .collect(),
        SAMPLES_FORMAT => read_all::<SampleLine>(path, SAMPLES_FORMAT)
            .with_context(ctx)?
            .into_iter()
            .map(|l| Ok((l.target_id.clone(), None, l.structure.to_structure()?)))
            .collect::<Result<_>>()?,
        other => bail!("{}: cannot read `{other}` files as structures", path.display()),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SweepRow {
    stol: f64,
    match_rate: f64,
    matched: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EvalSummary {
    format: String,
    format_version: u32,
    criteria: MatchCriteria,
    targets: usize,
    predictions: usize,
    matched: usize,
    match_rate: f64,
    volume_rmad: f64,
    sweep: Option<Vec<SweepRow>>,
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<Outcome> {
    let out = require(a.output, &cfg.paths.evaluation, "paths.evaluation")?;
    cfg.paths.evaluation = Some(out.clone());
    let crit = &mut cfg.evaluate.criteria;
    if let Some(v) = a.stol {
        crit.stol = v;
    }
    if let Some(v) = a.ltol {
        crit.ltol = v;
    }
    if let Some(v) = a.atol {
        crit.atol = v;
    }
    crit.validate()?;
    cfg.evaluate.sweep |= a.sweep;

    let split = a.split.as_deref().map(split_filter).transpose()?.flatten();
    let references: Vec<AtomicStructure> = load_structures(&a.references)?
        .into_iter()
        .filter(|(_, s, _)| split.is_none() || *s == split)
        .map(|(_, _, s)| s)
        .collect();
    let predicted = load_structures(&a.predictions)?;
    let index: HashMap<&str, usize> = references.iter().enumerate().map(|(k, r)| (r.id.as_str(), k)).collect();
    let mut unknown: Vec<String> = predicted
        .iter()
        .filter(|(id, _, _)| !index.contains_key(id.as_str()))
        .map(|(id, _, _)| id.clone())
        .collect();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(anyhow!(Error::IdMismatch(unknown)).context("predictions name targets missing from the references"));
    }
    let mut groups: Vec<(String, Vec<AtomicStructure>)> = references.iter().map(|r| (r.id.clone(), Vec::new())).collect();
    let mut pairs = Vec::new();
    for (id, _, s) in predicted {
        let k = index[id.as_str()];
        pairs.push((s.clone(), references[k].clone()));
        groups[k].1.push(s);
    }
    let n_pred = pairs.len();

    let crit = cfg.evaluate.criteria;
    let rate = match_rate(&groups, &references, &crit)?;
    let (rmad, _) = volume_rmad(&pairs);
    let matched = rate.targets.iter().filter(|t| t.matched).count();
    let sweep = if cfg.evaluate.sweep {
        let mut rows = Vec::new();
        for &stol in &cfg.evaluate.sweep_grid {
            let r = match_rate(&groups, &references, &MatchCriteria { stol, ..crit })?;
            rows.push(SweepRow {
                stol,
                match_rate: r.rate,
                matched: r.targets.iter().filter(|t| t.matched).count(),
            });
        }
        Some(rows)
    } else {
        None
    };

    fs::create_dir_all(&out)?;
    write_records::<TargetResult>(out.join("evaluation.jsonl"), EVALUATION_FORMAT, &rate.targets)?;
    if let Some(rows) = &sweep {
        let mut csv = String::from("stol,match_rate,matched,targets\n");
        for r in rows {
            let _ = writeln!(csv, "{},{},{},{}", r.stol, r.match_rate, r.matched, references.len());
        }
        fs::write(out.join("sweep.csv"), csv)?;
    }
    let summary = EvalSummary {
        format: "mcflow-evaluation-summary".into(),
        format_version: FORMAT_VERSION,
        criteria: crit,
        targets: references.len(),
        predictions: n_pred,
        matched,
        match_rate: rate.rate,
        volume_rmad: rmad,
        sweep: sweep.clone(),
    };
    write_json(out.join("summary.json"), &summary)?;
    cfg.write_effective(&out)?;

    println!(
        "criteria: ltol {} stol {} atol {}",
        crit.ltol, crit.stol, crit.atol
    );
    println!("match rate: {:.4} ({matched}/{})", rate.rate, references.len());
    println!("volume RMAD: {rmad:.4} %");
    if let Some(rows) = &sweep {
        for r in rows {
            println!("stol {:.1}: match rate {:.4}", r.stol, r.match_rate);
        }
    }
    Ok(Outcome::Complete)
}

fn params_line(c: &mcflow::Lattice) -> String {
    let p = c.params();
    format!(
        "a={:.4} b={:.4} c={:.4} alpha={:.3} beta={:.3} gamma={:.3}",
        p.a, p.b, p.c, p.alpha, p.beta, p.gamma
    )
}

fn chi_counts(c: &MolecularCrystal) -> String {
    let zeros = c.blocks.iter().filter(|b| b.chi == 0).count();
    format!("{{0: {zeros}, 1: {}}}", c.blocks.len() - zeros)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Summary lines and validity issues of one crystal.
fn describe_crystal(c: &MolecularCrystal, descriptors: Option<&[f64]>, out: &mut String) -> Vec<String> {
    let radii = RadiiTable::default();
    let _ = writeln!(out, "  Z: {}", c.z());
    let _ = writeln!(out, "  lattice: {}", params_line(&c.lattice));
    let _ = writeln!(out, "  chi: {}", chi_counts(c));
    let mut issues = c.check();
    match descriptors {
        Some(d) => {
            let _ = writeln!(out, "  descriptors: {}", fmt_vec(d));
        }
        None => match type_descriptors(c, &radii) {
            Ok(d) => {
                let _ = writeln!(out, "  descriptors: {}", fmt_vec(&d[0]));
            }
            Err(e) => issues.push(format!("descriptors: {e}")),
        },
    }
    issues
}

pub fn inspect(a: InspectArgs) -> Result<Outcome> {
    let path = &a.file;
    let mut entries: Vec<(String, serde_json::Value)> = Vec::new();
    if is_xyz(path) {
        for (loc, r) in read_raw(path)? {
            let r = r.with_context(|| format!("{}: {loc}", path.display()))?;
            entries.push((loc, serde_json::to_value(r)?));
        }
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(line).map_err(|e| anyhow!("schema error at line {}: {e}", k + 1))?;
            if v.get("format").is_some() {
                let h: Header = serde_json::from_value(v).map_err(|e| anyhow!("schema error at line {}: {e}", k + 1))?;
                if h.format_version != FORMAT_VERSION {
                    return Err(Error::FormatVersion {
                        found: h.format_version,
                        expected: FORMAT_VERSION,
                    }
                    .into());
                }
                continue;
            }
            entries.push((format!("line {}", k + 1), v));
        }
    }
    let mut flagged = 0;
    let mut out = String::new();
    for (loc, v) in entries {
        let schema = |e: serde_json::Error| anyhow!("schema error at {loc}: {e}");
        let mut issues;
        if v.get("crystal").is_some() && v.get("target_id").is_some() {
            let l: SampleLine = serde_json::from_value(v).map_err(schema)?;
            let _ = writeln!(out, "{} (sample of {}, {loc})", l.sample_id, l.target_id);
            issues = describe_crystal(&l.crystal, None, &mut out);
        } else if v.get("crystal").is_some() {
            let r: ProcessedRecord = serde_json::from_value(v).map_err(schema)?;
            let _ = writeln!(out, "{} (processed, {loc})", r.id);
            let _ = writeln!(out, "  formula: {} split: {}", r.formula, r.split.as_str());
            issues = describe_crystal(&r.crystal, r.descriptors.first().map(|d| d.as_slice()), &mut out);
            if r.z != r.crystal.z() {
                issues.push(format!("z = {} but {} blocks", r.z, r.crystal.z()));
            }
        } else {
            let r: DatasetRecord = serde_json::from_value(v).map_err(schema)?;
            let _ = writeln!(out, "{} (structure, {loc})", r.id);
            let _ = writeln!(out, "  atoms: {} formula: {}", r.species.len(), formula(&r.species));
            issues = Vec::new();
            match r.to_structure() {
                Err(e) => issues.push(e.to_string()),
                Ok(s) => match decompose_with(&s, &DecomposeOptions::default()) {
                    Err(e) => {
                        let _ = writeln!(out, "  lattice: {}", params_line(&s.lattice));
                        issues.push(format!("decomposition: {e}"));
                    }
                    Ok(c) => {
                        let given = r.descriptors.as_deref();
                        issues = describe_crystal(&c, given, &mut out);
                        match roundtrip_residual(&s, &c) {
                            Ok(res) => {
                                let _ = writeln!(out, "  roundtrip residual: {res:.3e} Å");
                            }
                            Err(e) => issues.push(e.to_string()),
                        }
                    }
                },
            }
        }
        let _ = writeln!(out, "  valid: {}", issues.is_empty());
        for i in &issues {
            let _ = writeln!(out, "  issue: {i}");
        }
        if !issues.is_empty() {
            flagged += 1;
        }
    }
    print!("{out}");
    Ok(if flagged == 0 { Outcome::Complete } else { Outcome::Partial })
}
