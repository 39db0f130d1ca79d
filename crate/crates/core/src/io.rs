//! Reading configurations and writing run artifacts.
//!
//! Snapshot files are flat little-endian binaries: `d` as `u64`, the node
//! count of each axis as `u64`, the box corners `lo` and `hi` as `f64`, the
//! time `t` as `f64`, then the values in row-major order (last axis
//! fastest). Every snapshot has a JSON sidecar with the same header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::initial::{InitDoc, InitialData};
use crate::rate_model::RateModel;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "CHJ_OUT_DIR";

/// A model given inline or as the path of a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Inline(RateModel),
}

impl ModelRef {
    /// Relative paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<RateModel> {
        match self {
            ModelRef::Path(p) => read_json(&base.join(p)),
            ModelRef::Inline(m) => Ok(m.clone()),
        }
    }
}

/// Initial data given inline or as the path of a file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitRef {
    Path(PathBuf),
    Inline(InitDoc),
}

impl InitRef {
    pub fn load(&self, model: &RateModel, base: &Path) -> Result<InitialData> {
        let doc = match self {
            InitRef::Path(p) => read_json(&base.join(p))?,
            InitRef::Inline(d) => d.clone(),
        };
        InitialData::from_doc(model, doc)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `explicit`, else `$CHJ_OUT_DIR`, else `./out`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out")),
    }
}

/// Header of a snapshot file, also written as its JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub n: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t: f64,
    pub quantity: String,
    pub layout: String,
}

/// Writes `<stem>.bin` and `<stem>.json` under `dir`; returns the binary path.
pub fn write_snapshot(dir: &Path, stem: &str, quantity: &str, field: &GridField) -> Result<PathBuf> {
    let spec = &field.spec;
    let d = spec.dim();
    let mut bytes = Vec::with_capacity(8 * (2 + 3 * d + field.values.len()));
    bytes.extend_from_slice(&(d as u64).to_le_bytes());
    for &n in &spec.n {
        bytes.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in spec.lo.iter().chain(&spec.hi).chain(std::iter::once(&field.t)).chain(&field.values) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = SnapshotHeader {
        dim: d,
        n: spec.n.clone(),
        lo: spec.lo.clone(),
        hi: spec.hi.clone(),
        t: field.t,
        quantity: quantity.to_string(),
        layout: "f64 little-endian, row-major, last axis fastest".to_string(),
    };
    write_json(&dir.join(format!("{stem}.json")), &header)?;
    Ok(bin)
}

pub fn read_snapshot(path: &Path) -> Result<GridField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Config(format!("{}: malformed snapshot ({what})", path.display()));
    let mut words = bytes.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("chunk of 8"));
    if bytes.len() % 8 != 0 {
        return Err(bad("length is not a multiple of 8"));
    }
    let mut next = || words.next().ok_or_else(|| bad("truncated"));
    let d = u64::from_le_bytes(next()?) as usize;
    if !(1..=2).contains(&d) {
        return Err(bad("dimension"));
    }
    let n = (0..d).map(|_| next().map(|w| u64::from_le_bytes(w) as usize)).collect::<Result<Vec<_>>>()?;
    let mut floats = |k: usize| (0..k).map(|_| next().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>();
    let lo = floats(d)?;
    let hi = floats(d)?;
    let t = floats(1)?[0];
    let spec = GridSpec::new(lo, hi, n)?;
    let values = floats(spec.len())?;
    if bytes.len() != 8 * (2 + 3 * d + spec.len()) {
        return Err(bad("trailing data"));
    }
    GridField::new(spec, values, t)
}

/// Two whitespace-separated columns, one row per point.
pub fn write_plot_data(path: &Path, header: &str, rows: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    let mut text = format!("# {header}\n");
    for (x, y) in rows {
        text.push_str(&format!("{x:.17e} {y:.17e}\n"));
    }
    write_text(path, &text)
}

/// Plot data of a one-dimensional field; `None` for `d = 2`.
pub fn field_plot_rows(field: &GridField) -> Option<Vec<(f64, f64)>> {
    (field.dim() == 1).then(|| {
        (0..field.spec.len())
            .map(|i| (field.spec.coord(0, i), field.values[i]))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(vec![-1.0, 0.0], vec![2.0, 1.5], vec![6, 5]).unwrap();
        let field = GridField::from_fn(spec, 0.3, |x| x[0].sin() * x[1] + 1e-300);
        let path = write_snapshot(dir.path(), "u_t0.3", "u", &field).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back.spec, field.spec);
        assert_eq!(back.t.to_bits(), field.t.to_bits());
        assert!(back.values.iter().zip(&field.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let header: SnapshotHeader = read_json(&dir.path().join("u_t0.3.json")).unwrap();
        assert_eq!(header.n, vec![6, 5]);
    }

    #[test]
    fn truncated_snapshot_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let field = GridField::from_fn(GridSpec::line(0.0, 1.0, 5).unwrap(), 0.0, |x| x[0]);
        let path = write_snapshot(dir.path(), "f", "u", &field).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Config(_))));
    }

    #[test]
    fn model_refs_resolve_inline_and_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let model = RateModel::canonical_1d();
        write_json(&dir.path().join("m.json"), &model).unwrap();
        let by_path: ModelRef = serde_json::from_str("\"m.json\"").unwrap();
        let inline: ModelRef = serde_json::from_str(r#"{"a":1,"B":[[1]],"theta":[0.5],"c":1}"#).unwrap();
        for r in [by_path, inline] {
            let m = r.load(dir.path()).unwrap();
            assert_eq!(m.rate(&[0.0], 0.75), 0.0);
        }
    }
}
