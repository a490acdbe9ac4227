use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iter: u64,
    pub l_cfm: f64,
    pub l_tim: f64,
    pub l_total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Append-only JSON-lines metrics file.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(m)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_appends_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = |i| StepMetrics { iter: i, l_cfm: 1.5, l_tim: -2.0, l_total: 1.4, grad_norm: 0.3, wall_ms: 12.0 };
        MetricsLog::open(&path).unwrap().append(&m(1)).unwrap();
        MetricsLog::open(&path).unwrap().append(&m(2)).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), vec![m(1), m(2)]);
        let text = std::fs::read_to_string(&path).unwrap();
        let keys: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut names: Vec<_> = keys.as_object().unwrap().keys().cloned().collect();
        names.sort();
        assert_eq!(names, ["grad_norm", "iter", "l_cfm", "l_tim", "l_total", "wall_ms"]);
    }
}
