//! Table rows, per-coordinate dumps and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub experiment: String,
    pub param1: String,
    pub param2: String,
    pub metric: String,
    pub value: f64,
    pub reps: usize,
    pub stderr: f64,
}

impl TableRow {
    pub fn new(experiment: &str, param1: impl ToString, param2: impl ToString, metric: &str, samples: &[f64]) -> Self {
        let (value, stderr) = mean_stderr(samples);
        TableRow {
            experiment: experiment.to_string(),
            param1: param1.to_string(),
            param2: param2.to_string(),
            metric: metric.to_string(),
            value,
            reps: samples.len(),
            stderr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(BenchError::validation(format!(
                "row {}/{} has non-finite value",
                self.experiment, self.metric
            )));
        }
        if self.reps == 0 {
            return Err(BenchError::validation("row has zero replicates"));
        }
        Ok(())
    }
}

/// Mean and standard error (zero for a single sample).
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordRow {
    pub j: usize,
    pub statistic: String,
    pub approx: f64,
    pub exact: f64,
    pub error: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| BenchError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Write a matrix with a header row of column names.
pub fn write_matrix(path: &Path, names: &[String], matrix: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for row in matrix.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| BenchError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TableRow>, _>>()?;
    Ok(rows)
}

/// Table rows serialized exactly as written to `table.csv`.
pub fn table_to_string(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::validation(e.to_string()))
}

pub fn table_from_str(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<TableRow>, _>>()?;
    Ok(rows)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| BenchError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: toml::Value,
    /// Wall-clock seconds per stage.
    pub stages: BTreeMap<String, f64>,
    /// File name to SHA-256 hex digest.
    pub digests: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: toml::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            stages: BTreeMap::new(),
            digests: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn record_file(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.digests.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|source| BenchError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Names of recorded files whose current digest differs.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (name, digest) in &self.digests {
            if &sha256_file(&dir.join(name))? != digest {
                bad.push(name.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_stderr_values() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![TableRow::new("update-error", 1.0, 0.95, "debiased", &[0.1, 0.2])];
        let text = table_to_string(&rows).unwrap();
        assert!(text.starts_with("experiment,param1,param2,metric,value,reps,stderr"));
        assert_eq!(table_from_str(&text).unwrap(), rows);
    }
}
