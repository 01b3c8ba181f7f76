use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics log. Statistics that do not exist for a step
/// (e.g. advantages under REINFORCE, or anything on a skipped step) are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    /// One-based step index.
    pub step: u64,
    pub epoch: usize,
    pub task_ids: Vec<String>,
    pub reward_mean: f64,
    /// Mean active-edge count over the batch's groups.
    pub e_batch_size: f64,
    pub mu_s: Option<f64>,
    pub sigma_s: Option<f64>,
    pub adv_min: Option<f64>,
    pub adv_max: Option<f64>,
    pub loss: Option<f64>,
    pub kl_term: Option<f64>,
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Appends one JSON object per line, flushing after each record.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Self::open(path, false)
    }

    /// Opens for appending (used when resuming).
    pub fn append(path: &Path) -> Result<Self> {
        Self::open(path, true)
    }

    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(m)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_metrics(path: &Path, records: &[StepMetrics]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    records.iter().try_for_each(|m| w.write(m))
}

/// `(line number, reason)`
pub type MalformedLine = (usize, String);

/// Parses a metrics log. Malformed lines are returned separately as
/// `(line number, reason)` rather than failing the whole read.
pub fn read_metrics(path: &Path) -> Result<(Vec<StepMetrics>, Vec<MalformedLine>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StepMetrics>(line) {
            Ok(m) => records.push(m),
            Err(e) => bad.push((i + 1, e.to_string())),
        }
    }
    Ok((records, bad))
}
