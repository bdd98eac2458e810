use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcflow::crystal::AtomicStructure;
use mcflow::io::{write_records, DatasetRecord, DATASET_FORMAT};
use mcflow::synth::{random_crystal, CrystalRecipe, Molecule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
[split]
val = 0.0
test = 0.0

[model.egnn]
n_layers = 2
hidden_dim = 16
n_rbf = 8

[model.mcnet]
n_layers = 2
hidden_dim = 16
fourier_k = 3
time_embed_dim = 8
chi_embed_dim = 4

[train]
steps = 6
batch_size = 4
checkpoint_every = 3
seed = 3

[sample]
n_steps = 50
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn toy(n: usize) -> Vec<AtomicStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mols = Molecule::all();
    (0..n)
        .map(|k| {
            let recipe = CrystalRecipe::new(mols[k % mols.len()].clone(), 1 + k % 3);
            random_crystal(&mut rng, format!("toy-{k:02}"), &recipe).unwrap()
        })
        .collect()
}

fn write_dataset(path: &Path, structures: &[AtomicStructure]) {
    let recs: Vec<DatasetRecord> = structures.iter().map(DatasetRecord::from_structure).collect();
    write_records(path, DATASET_FORMAT, &recs).unwrap();
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new(n: usize) -> Self {
        let dir = TempDir::new().unwrap();
        write_dataset(&dir.path().join("raw.jsonl"), &toy(n));
        fs::write(dir.path().join("run.toml"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self) -> PathBuf {
        self.dir.path().to_path_buf()
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", "run.toml"];
        full.extend_from_slice(args);
        run(self.dir.path(), &full)
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.dir.path().join(rel)).unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&self.read(rel)).unwrap()
    }

    fn preprocess(&self) {
        let o = self.run(&["preprocess", "--input", "raw.jsonl", "--output", "proc"]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }

    fn train(&self) {
        self.preprocess();
        let o = self.run(&["train", "--processed", "proc", "--output", "ckpt"]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
}

fn lines(s: &str) -> Vec<Value> {
    s.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn preprocess_toy_set() {
    let w = Work::new(10);
    w.preprocess();
    let report = w.json("proc/report.json");
    assert_eq!(report["processed"], 10);
    assert_eq!(report["quarantined"], 0);
    assert_eq!(lines(&w.read("proc/processed.jsonl")).len(), 10);
    let header: Value = serde_json::from_str(w.read("proc/processed.jsonl").lines().next().unwrap()).unwrap();
    assert_eq!(header["format_version"], 1);
    for (k, d) in report["structures"].as_array().unwrap().iter().enumerate() {
        assert_eq!(d["z"], 1 + k % 3);
        assert!(d["roundtrip_residual"].as_f64().unwrap() < 1e-6);
    }
    assert!(w.path().join("proc/dataset.schema.json").exists());
    assert!(w.read("proc/config.effective.toml").contains("[paths]"));
}

#[test]
fn preprocess_is_idempotent() {
    let w = Work::new(6);
    w.preprocess();
    let first: Vec<String> = ["processed.jsonl", "report.json", "quarantine.jsonl"]
        .iter()
        .map(|f| w.read(&format!("proc/{f}")))
        .collect();
    w.preprocess();
    for (k, f) in ["processed.jsonl", "report.json", "quarantine.jsonl"].iter().enumerate() {
        assert_eq!(first[k], w.read(&format!("proc/{f}")), "{f}");
    }
}

#[test]
fn negative_determinant_is_quarantined() {
    let w = Work::new(3);
    let mut raw = w.read("raw.jsonl");
    let mut bad = DatasetRecord::from_structure(&toy(1)[0]);
    bad.id = "flipped".into();
    bad.lattice[2] = [-bad.lattice[2][0], -bad.lattice[2][1], -bad.lattice[2][2]];
    raw.push_str(&serde_json::to_string(&bad).unwrap());
    raw.push_str("\n{\"id\": \"broken\"}\n");
    fs::write(w.path().join("raw.jsonl"), raw).unwrap();
    let o = w.run(&["preprocess", "--input", "raw.jsonl", "--output", "proc"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    let q = lines(&w.read("proc/quarantine.jsonl"));
    assert_eq!(q.len(), 2);
    assert_eq!(q[0]["id"], "flipped");
    assert_eq!(q[0]["reason"], "invalid-lattice");
    assert_eq!(q[1]["reason"], "schema");
    assert_eq!(w.json("proc/report.json")["processed"], 3);
}

#[test]
fn all_records_failing_is_fatal() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("raw.jsonl"), "{\"id\": \"x\"}\n").unwrap();
    let o = run(dir.path(), &["preprocess", "--input", "raw.jsonl", "--output", "proc"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn extxyz_import() {
    let dir = TempDir::new().unwrap();
    let xyz: String = toy(3).iter().map(mcflow::io::to_extxyz).collect();
    fs::write(dir.path().join("raw.extxyz"), xyz).unwrap();
    let o = run(dir.path(), &["preprocess", "--input", "raw.extxyz", "--output", "proc"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let recs = lines(&fs::read_to_string(dir.path().join("proc/processed.jsonl")).unwrap());
    assert_eq!(recs[1]["id"], "toy-01");
    assert_eq!(recs[2]["z"], 3);
}

#[test]
fn descriptor_sidecar_overrides() {
    let w = Work::new(2);
    let psi: Vec<f64> = (0..18).map(|k| k as f64 * 0.5).collect();
    let side = format!(
        "{{\"format\": \"mcflow-descriptors\", \"format_version\": 1}}\n{{\"id\": \"toy-01\", \"descriptors\": {}}}\n",
        serde_json::to_string(&psi).unwrap()
    );
    fs::write(w.path().join("psi.jsonl"), side).unwrap();
    let o = w.run(&["preprocess", "--input", "raw.jsonl", "--output", "proc", "--descriptors", "psi.jsonl"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let recs = lines(&w.read("proc/processed.jsonl"));
    assert_eq!(recs[0]["descriptor_source"], "computed");
    assert_eq!(recs[1]["descriptor_source"], "supplied");
    assert_eq!(recs[1]["descriptors"][0][3].as_f64().unwrap(), 1.5);
}

#[test]
fn config_errors() {
    let w = Work::new(1);
    fs::write(w.path().join("bad.toml"), "[train]\nstep = 3\n").unwrap();
    let o = run(&w.path(), &["--config", "bad.toml", "train"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("unknown field"), "{}", text(&o));
    let o = w.run(&["train"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("paths.processed"), "{}", text(&o));
}

#[test]
fn training_writes_trace_and_resumes_exactly() {
    let w = Work::new(4);
    w.train();
    let trace = w.read("ckpt/loss_trace.csv");
    let rows: Vec<&str> = trace.lines().collect();
    assert_eq!(rows[0], "step,loss,lattice,rotation,frac,val_loss");
    assert_eq!(rows.len(), 7);
    for r in &rows[1..] {
        let f: Vec<f64> = r.split(',').take(5).map(|x| x.parse().unwrap()).collect();
        assert!((f[1] - (f[2] + f[3] + f[4])).abs() < 1e-9 * f[1].max(1.0), "{r}");
    }
    assert!(w.path().join("ckpt/step_000003.json").exists());
    assert!(w.path().join("ckpt/final.json").exists());

    let o = w.run(&["train", "--processed", "proc", "--output", "resumed", "--resume", "ckpt/step_000003.json"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let again = w.read("resumed/loss_trace.csv");
    let again: Vec<&str> = again.lines().collect();
    assert_eq!(again.len(), 4);
    assert_eq!(&again[1..], &rows[4..]);
}

#[test]
fn prior_fit_and_use() {
    let w = Work::new(4);
    w.preprocess();
    let o = w.run(&["fit-prior", "--processed", "proc", "--output", "prior.json"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(w.json("prior.json")["format"], "mcflow-prior");
    let o = w.run(&["train", "--processed", "proc", "--output", "ckpt", "--prior", "prior.json", "--steps", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn sampling_outputs_and_reproducibility() {
    let w = Work::new(4);
    w.train();
    let args = [
        "sample", "--checkpoint", "ckpt/final.json", "--processed", "proc", "--id", "toy-01", "--n-samples", "10",
        "--seed", "5", "--no-overlap-filter",
    ];
    let mut a = args.to_vec();
    a.extend(["--output", "s1"]);
    let o = w.run(&a);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let mut b = args.to_vec();
    b.extend(["--output", "s2"]);
    assert_eq!(code(&w.run(&b)), 0);
    let samples = w.read("s1/samples.jsonl");
    assert_eq!(samples, w.read("s2/samples.jsonl"));
    let recs = lines(&samples);
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r["target_id"] == "toy-01"));
    let rec = &recs[0]["record"];
    assert_eq!(rec["n_steps"], 50);
    assert_eq!(rec["s_uf"], 9.0);
    assert_eq!(rec["s_ur"], 3.0);
    let meta = w.json("s1/metadata.json");
    assert_eq!(meta["sampler"]["n_steps"], 50);

    let mut ck = w.json("ckpt/final.json");
    ck["format_version"] = Value::from(99);
    fs::write(w.path().join("old.json"), ck.to_string()).unwrap();
    let o = w.run(&["sample", "--checkpoint", "old.json", "--processed", "proc", "--output", "s3", "--split", "all"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("unsupported format version 99"), "{}", text(&o));
}

#[test]
fn evaluate_against_self_and_mismatch() {
    let w = Work::new(4);
    w.preprocess();
    let o = w.run(&["evaluate", "--predictions", "raw.jsonl", "--references", "proc/processed.jsonl", "--output", "ev", "--sweep"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let s = w.json("ev/summary.json");
    assert_eq!(s["match_rate"], 1.0);
    assert!(s["volume_rmad"].as_f64().unwrap() < 1e-9);
    assert_eq!(s["criteria"]["stol"], 0.8);
    let sweep = w.read("ev/sweep.csv");
    assert_eq!(sweep.lines().count(), 9);
    assert!(sweep.lines().nth(1).unwrap().starts_with("0.5,1,"));
    assert!(sweep.lines().nth(8).unwrap().starts_with("1.2,1,"));
    assert_eq!(lines(&w.read("ev/evaluation.jsonl")).len(), 4);

    let mut other = toy(2);
    other[0].id = "stranger".into();
    other[1].id = "alien".into();
    write_dataset(&w.path().join("other.jsonl"), &other);
    let o = w.run(&["evaluate", "--predictions", "other.jsonl", "--references", "raw.jsonl", "--output", "ev2"]);
    assert_eq!(code(&o), 2);
    let msg = text(&o);
    assert!(msg.contains("stranger") && msg.contains("alien"), "{msg}");
}

#[test]
fn inspect_flags_problems() {
    let w = Work::new(2);
    w.preprocess();
    let o = w.run(&["inspect", "raw.jsonl"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("valid: true") && out.contains("Z: 2") && out.contains("descriptors: ["), "{out}");

    let recs = lines(&w.read("proc/processed.jsonl"));
    let mut unwrapped = recs[0].clone();
    unwrapped["crystal"]["blocks"][0]["centroid_frac"] = serde_json::json!([1.25, 0.5, 0.5]);
    let mut skewed = recs[1].clone();
    skewed["crystal"]["blocks"][0]["rotation"] = serde_json::json!([1.0, 0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0]);
    fs::write(w.path().join("bad.jsonl"), format!("{unwrapped}\n{skewed}\n")).unwrap();
    let o = w.run(&["inspect", "bad.jsonl"]);
    assert_eq!(code(&o), 1);
    let out = text(&o);
    assert!(out.contains("centroid not wrapped"), "{out}");
    assert!(out.contains("rotation not orthonormal"), "{out}");
    assert_eq!(out.matches("valid: false").count(), 2);

    fs::write(w.path().join("junk.jsonl"), "{\"id\": \"a\", \"lattice\": 3}\n").unwrap();
    let o = w.run(&["inspect", "junk.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("schema error at line 1"), "{}", text(&o));
}
