//! Per-round metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ufl_core::orchestrator::RoundRecord;

use crate::{Result, SimError};

pub const HEADER: &str =
    "round,test_accuracy,test_loss,num_active,num_candidates,num_selected,L_hat,theta,mean_tv_type_error,wall_time_s";

/// Writes one row per round and flushes after each, so a crashed or
/// interrupted run keeps every finished round.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl std::fmt::Debug for MetricsWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsWriter").field("path", &self.path).finish()
    }
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{HEADER}")
            .and_then(|_| out.flush())
            .map_err(|e| SimError::io(path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn write(&mut self, r: &RoundRecord) -> Result<()> {
        self.inner.serialize(r)?;
        self.inner.flush().map_err(|e| SimError::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header.join(",") != HEADER {
        return Err(SimError::config(
            path.display().to_string(),
            format!("unexpected metrics header `{}`", header.join(",")),
        ));
    }
    rd.deserialize().map(|r| r.map_err(SimError::from)).collect()
}

/// First round (1-based) whose test accuracy reaches `level`.
pub fn rounds_to(records: &[RoundRecord], level: f64) -> Option<usize> {
    records.iter().find(|r| r.test_accuracy >= level).map(|r| r.round)
}

/// Mean and population standard deviation of the number of selected clients.
pub fn selected_stats(records: &[RoundRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.num_selected as f64).sum::<f64>() / n;
    let var = records.iter().map(|r| (r.num_selected as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
