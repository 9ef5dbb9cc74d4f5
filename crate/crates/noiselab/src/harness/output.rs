use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table held as strings so that formatting happens in one place.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io { path: "<csv buffer>".into(), source: e.into_error() })
    }
}

/// Cell helpers.
pub fn f(v: f64) -> String {
    fmt_f64(v)
}
pub fn u(v: usize) -> String {
    v.to_string()
}
pub fn b(v: bool) -> String {
    v.to_string()
}
pub fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
pub fn opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Files produced by a run, keyed by relative path. Kept in memory until
/// the run succeeds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        let path = path.into();
        assert!(!path.starts_with('/') && !path.split('/').any(|c| c == ".."), "relative path expected: {path}");
        self.files.insert(path, bytes);
    }

    pub fn add_csv(&mut self, path: impl Into<String>, table: &Table) -> Result<()> {
        self.add(path, table.to_bytes()?);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, path: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }

    /// Moves every file under `prefix/`.
    pub fn nest(&mut self, prefix: &str, other: Artifacts) {
        for (k, v) in other.files {
            self.add(format!("{prefix}/{k}"), v);
        }
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(|v| v.as_slice())
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes into `root/.name.partial`, then renames to `root/name`,
    /// replacing any earlier run. Nothing is left behind on failure.
    pub fn write_atomically(&self, root: &Path, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let tmp = root.join(format!(".{name}.partial"));
        let dest = root.join(name);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        let res = self.write_into(&tmp).and_then(|()| {
            if dest.exists() {
                fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            }
            fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
        });
        if let Err(e) = res {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        Ok(dest)
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    /// Grid point label, for grid kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl SeedMetrics {
    pub fn new(seed: u64) -> Self {
        SeedMetrics { seed, point: None, metrics: BTreeMap::new() }
    }

    /// Non-finite values are skipped so the JSON stays numeric.
    pub fn set(&mut self, key: impl Into<String>, v: f64) {
        if v.is_finite() {
            self.metrics.insert(key.into(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: String,
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    pub aggregate: BTreeMap<String, Aggregate>,
    pub checks: BTreeMap<String, bool>,
    pub passed: bool,
}

pub fn aggregate(per_seed: &[SeedMetrics]) -> BTreeMap<String, Aggregate> {
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in per_seed {
        for (k, &v) in &s.metrics {
            cols.entry(k).or_default().push(v);
        }
    }
    cols.into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (k.to_string(), Aggregate { mean, std, n })
        })
        .collect()
}
