//! On-disk formats: line-delimited JSON records behind a versioned header,
//! a descriptor sidecar, and an extended-XYZ importer.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crystal::{AtomicStructure, MolecularCrystal};
use crate::descriptors::N_DESCRIPTORS;
use crate::error::{Error, Result};
use crate::Lattice;

pub const FORMAT_VERSION: u32 = 1;

pub const DATASET_FORMAT: &str = "mcflow-dataset";
pub const PROCESSED_FORMAT: &str = "mcflow-processed";
pub const DESCRIPTOR_FORMAT: &str = "mcflow-descriptors";
pub const SAMPLES_FORMAT: &str = "mcflow-samples";
pub const EVALUATION_FORMAT: &str = "mcflow-evaluation";

/// First line of every file written by this crate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub format_version: u32,
}

impl Header {
    pub fn new(format: &str) -> Self {
        Self {
            format: format.to_string(),
            format_version: FORMAT_VERSION,
        }
    }

    fn check(&self, format: &str) -> Result<()> {
        if self.format != format {
            return Err(Error::Parse(format!("expected a {format} file, found {}", self.format)));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Deterministic split from a SHA-256 of the formula, so one formula never
/// lands in two splits. `val` and `test` are fractions in `[0, 1]`.
pub fn formula_split(formula: &str, val: f64, test: f64) -> Split {
    let digest = Sha256::digest(formula.as_bytes());
    let x = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) as f64 / u64::MAX as f64;
    if x < test {
        Split::Test
    } else if x < test + val {
        Split::Val
    } else {
        Split::Train
    }
}

/// One raw all-atom structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    /// Cell vectors as rows, Å.
    pub lattice: [[f64; 3]; 3],
    pub species: Vec<String>,
    /// Cartesian positions, Å.
    pub cart: Vec<[f64; 3]>,
    /// Precomputed descriptors shared by every molecule of the structure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl DatasetRecord {
    pub fn from_structure(s: &AtomicStructure) -> Self {
        Self {
            id: s.id.clone(),
            lattice: s.lattice.rows(),
            species: s.species.clone(),
            cart: s.cart.iter().map(|x| [x.x, x.y, x.z]).collect(),
            descriptors: None,
            split: None,
        }
    }

    pub fn to_structure(&self) -> Result<AtomicStructure> {
        let lattice = Lattice::from_rows(self.lattice)?;
        AtomicStructure::new(
            self.id.clone(),
            self.species.clone(),
            self.cart.iter().map(|x| Vector3::from(*x)).collect(),
            lattice,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.descriptors {
            check_descriptors(d)?;
        }
        self.to_structure().map(|_| ())
    }
}

fn check_descriptors(d: &[f64]) -> Result<()> {
    if d.len() != N_DESCRIPTORS || d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "descriptors must be {N_DESCRIPTORS} finite values, got {}",
            d.len()
        )));
    }
    Ok(())
}

/// One line of the descriptor sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorRecord {
    pub id: String,
    pub descriptors: Vec<f64>,
}

/// Sidecar lookup by structure id.
pub fn read_descriptor_sidecar(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (line, rec) in read_records::<DescriptorRecord>(path, DESCRIPTOR_FORMAT, true)? {
        let rec = rec.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        check_descriptors(&rec.descriptors).map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        out.insert(rec.id, rec.descriptors);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorSource {
    Computed,
    Supplied,
}

/// A decomposed structure ready for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessedRecord {
    pub id: String,
    pub formula: String,
    pub split: Split,
    pub z: usize,
    /// Largest atom displacement (Å) of decompose → reconstruct.
    pub roundtrip_residual: f64,
    /// Unscaled descriptors, one row per molecule type in block order.
    pub descriptors: Vec<Vec<f64>>,
    pub descriptor_source: DescriptorSource,
    pub crystal: MolecularCrystal,
}

/// Reads a line-delimited file. A header line is required unless
/// `header_optional`, in which case a first line carrying a `format` key is
/// treated as the header. Records that fail to parse are returned as errors
/// with their 1-based line number; a bad header is fatal.
pub fn read_records<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    format: &str,
    header_optional: bool,
) -> Result<Vec<(usize, Result<T>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut out = Vec::new();
    let mut first = true;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            let value: Option<serde_json::Value> = serde_json::from_str(line).ok();
            let is_header = value.as_ref().and_then(|v| v.get("format")).is_some();
            if is_header {
                let h: Header = serde_json::from_str(line).map_err(|e| Error::Parse(format!("line 1: {e}")))?;
                h.check(format)?;
                continue;
            }
            if !header_optional {
                return Err(Error::Parse(format!("{}: missing {format} header", path.display())));
            }
        }
        out.push((k + 1, serde_json::from_str(line).map_err(Error::from)));
    }
    Ok(out)
}

/// Reads every record, failing on the first bad line.
pub fn read_all<T: DeserializeOwned>(path: impl AsRef<Path>, format: &str) -> Result<Vec<T>> {
    read_records(path, format, false)?
        .into_iter()
        .map(|(line, r)| r.map_err(|e| Error::Parse(format!("line {line}: {e}"))))
        .collect()
}

/// Writes a header and one JSON line per record to a temporary file, then
/// renames it over `path`.
pub fn write_records<T: Serialize>(path: impl AsRef<Path>, format: &str, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
        serde_json::to_writer(&mut w, &Header::new(format))?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes pretty JSON atomically.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// JSON Schema of a dataset record, written next to datasets.
pub const DATASET_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "mcflow dataset record",
  "description": "One line per structure. The file starts with {\"format\": \"mcflow-dataset\", \"format_version\": 1}.",
  "type": "object",
  "additionalProperties": false,
  "required": ["id", "lattice", "species", "cart"],
  "properties": {
    "id": {"type": "string"},
    "lattice": {
      "description": "Cell vectors as rows in angstrom; determinant must be positive.",
      "type": "array", "minItems": 3, "maxItems": 3,
      "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}
    },
    "species": {"type": "array", "items": {"type": "string"}},
    "cart": {
      "description": "Cartesian positions in angstrom, same length as species.",
      "type": "array",
      "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}
    },
    "descriptors": {
      "description": "Optional 18 precomputed descriptor values used for every molecule.",
      "type": "array", "minItems": 18, "maxItems": 18, "items": {"type": "number"}
    },
    "split": {"enum": ["train", "val", "test"]}
  }
}
"#;

fn header_fields(line: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    let mut rest = line.trim();
    while !rest.is_empty() {
        let eq = rest
            .find('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value in `{rest}`")))?;
        let key = rest[..eq].trim().to_string();
        rest = &rest[eq + 1..];
        let value = if let Some(stripped) = rest.strip_prefix('"') {
            let end = stripped
                .find('"')
                .ok_or_else(|| Error::Parse(format!("unterminated quote for `{key}`")))?;
            let v = stripped[..end].to_string();
            rest = &stripped[end + 1..];
            v
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let v = rest[..end].to_string();
            rest = &rest[end..];
            v
        };
        out.insert(key, value);
        rest = rest.trim_start();
    }
    Ok(out)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad number `{s}` in {what}")))
}

/// Parses extended-XYZ frames. The comment line must carry
/// `Lattice="ax ay az bx by bz cx cy cz"`; atom lines start with the element
/// followed by x, y, z. The id comes from `id=` or `name=`, else
/// `{stem}-{frame}`. Each frame parses independently.
pub fn parse_extxyz(text: &str, stem: &str) -> Vec<Result<DatasetRecord>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut k = 0;
    let mut frame = 0;
    while k < lines.len() {
        if lines[k].trim().is_empty() {
            k += 1;
            continue;
        }
        let start = k + 1;
        let n = match lines[k].trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                out.push(Err(Error::Parse(format!("line {start}: expected atom count"))));
                break;
            }
        };
        if k + 2 + n > lines.len() {
            out.push(Err(Error::Parse(format!("line {start}: frame truncated"))));
            break;
        }
        let comment = lines[k + 1];
        let atoms = &lines[k + 2..k + 2 + n];
        out.push(parse_frame(comment, atoms, stem, frame).map_err(|e| Error::Parse(format!("frame at line {start}: {e}"))));
        k += 2 + n;
        frame += 1;
    }
    out
}

fn parse_frame(comment: &str, atoms: &[&str], stem: &str, frame: usize) -> Result<DatasetRecord> {
    let fields = header_fields(comment)?;
    let lat = fields
        .get("Lattice")
        .ok_or_else(|| Error::Parse("missing Lattice field".into()))?;
    let vals: Vec<f64> = lat
        .split_whitespace()
        .map(|s| parse_f64(s, "Lattice"))
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        return Err(Error::Parse(format!("Lattice needs 9 numbers, got {}", vals.len())));
    }
    let m = Matrix3::from_row_slice(&vals);
    let lattice = [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ];
    let id = fields
        .get("id")
        .or_else(|| fields.get("name"))
        .cloned()
        .unwrap_or_else(|| format!("{stem}-{frame}"));
    let mut species = Vec::with_capacity(atoms.len());
    let mut cart = Vec::with_capacity(atoms.len());
    for (j, line) in atoms.iter().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(Error::Parse(format!("atom {j}: expected element and 3 coordinates")));
        }
        species.push(parts[0].to_string());
        cart.push([
            parse_f64(parts[1], "position")?,
            parse_f64(parts[2], "position")?,
            parse_f64(parts[3], "position")?,
        ]);
    }
    Ok(DatasetRecord {
        id,
        lattice,
        species,
        cart,
        descriptors: None,
        split: None,
    })
}

/// Writes one extended-XYZ frame.
pub fn to_extxyz(s: &AtomicStructure) -> String {
    let r = s.lattice.rows();
    let lat: Vec<String> = r.iter().flatten().map(|v| format!("{v:.10}")).collect();
    let mut out = format!(
        "{}\nLattice=\"{}\" Properties=species:S:1:pos:R:3 id={}\n",
        s.len(),
        lat.join(" "),
        s.id
    );
    for (el, x) in s.species.iter().zip(&s.cart) {
        out.push_str(&format!("{el} {:.10} {:.10} {:.10}\n", x.x, x.y, x.z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_parsing() {
        let f = header_fields(r#"Lattice="1 0 0 0 1 0 0 0 1" Properties=species:S:1:pos:R:3 id=abc"#).unwrap();
        assert_eq!(f["Lattice"], "1 0 0 0 1 0 0 0 1");
        assert_eq!(f["id"], "abc");
        assert!(header_fields("Lattice=\"1 2").is_err());
    }

    #[test]
    fn split_is_stable() {
        assert_eq!(formula_split("C2H6O", 0.1, 0.1), formula_split("C2H6O", 0.1, 0.1));
        assert_eq!(formula_split("C2H6O", 0.0, 0.0), Split::Train);
        assert_eq!(formula_split("C2H6O", 0.0, 1.0), Split::Test);
    }

    #[test]
    fn schema_is_json() {
        let v: serde_json::Value = serde_json::from_str(DATASET_SCHEMA).unwrap();
        assert_eq!(v["required"][0], "id");
    }
}
