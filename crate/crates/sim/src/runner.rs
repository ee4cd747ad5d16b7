//! Executes one configured run into an output directory.
//!
//! A run directory holds `metrics.csv`, `manifest.toml` and, with diagnostics
//! enabled, `geometry.csv`, `comm_codebook.csv`, `quant_codebook.csv` (final
//! codebook) and `diagnostics.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use ufl_core::config::{DataSource, ScenarioConfig};
use ufl_core::data::{synthetic_dataset, Dataset};
use ufl_core::orchestrator::{FederatedData, RoundRecord, Simulation};
use ufl_core::rng::{stream, Stream};

use crate::dump::{self, DiagnosticsWriter};
use crate::idx::{self, IdxImages};
use crate::manifest::{unix_now, RunManifest, Summary};
use crate::metrics::{rounds_to, selected_stats, MetricsWriter};
use crate::{Result, SimError};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub label: String,
    /// Worker threads; 1 runs everything on the calling thread.
    pub threads: usize,
    /// Record wall-clock time per round. Disable for byte-identical reruns.
    pub timing: bool,
    pub diagnostics: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            label: "run".into(),
            threads: 1,
            timing: true,
            diagnostics: false,
        }
    }
}

pub fn load_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let s = &cfg.data.synthetic;
            let mut rng = stream(cfg.seed, Stream::Synthetic, 0, 0);
            Ok(synthetic_dataset(s.samples, s.classes, s.dim, s.separation, &mut rng)?)
        }
        DataSource::Fmnist => {
            let ds = idx::load_fmnist(Path::new(&cfg.data.fmnist_dir))?;
            if ds.dim() != cfg.model.input_dim {
                return Err(SimError::config(
                    "model.input_dim",
                    format!("FMNIST images have {} pixels, model expects {}", ds.dim(), cfg.model.input_dim),
                ));
            }
            Ok(ds)
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::config("threads", e.to_string()))
}

fn summarize(records: &[RoundRecord]) -> Summary {
    let (selected_mean, selected_sd) = selected_stats(records);
    Summary {
        rounds: records.len(),
        final_accuracy: records.last().map_or(f64::NAN, |r| r.test_accuracy),
        rounds_to_70: rounds_to(records, 0.7),
        selected_mean,
        selected_sd,
        decode_failures: records.iter().map(|r| r.decode_failures).sum(),
    }
}

/// Runs `cfg` and writes its artifacts into `dir`, creating it if needed.
pub fn run_to_dir(cfg: &ScenarioConfig, opts: &RunOptions, dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let full = load_dataset(cfg)?;
    let data = FederatedData::build(&full, cfg)?;
    pool(opts.threads)?.install(|| execute(cfg, opts, dir, &data))
}

fn execute(cfg: &ScenarioConfig, opts: &RunOptions, dir: &Path, data: &FederatedData) -> Result<Summary> {
    let mut sim = Simulation::new(cfg, data)?;
    let mut manifest = RunManifest::new(&opts.label, cfg, opts.threads);
    let manifest_path = dir.join("manifest.toml");
    let mut diag = None;
    if opts.diagnostics {
        dump::write_geometry(&dir.join("geometry.csv"), sim.geometry(), sim.client_positions())?;
        manifest.geometry_dump = Some("geometry.csv".into());
        if let Some(cb) = sim.comm_codebook() {
            dump::write_comm_codebook(&dir.join("comm_codebook.csv"), cb)?;
        }
        diag = Some(DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?);
    }
    manifest.write(&manifest_path)?;

    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let start = Instant::now();
        let mut r = sim.run_round()?;
        if opts.timing {
            r.wall_time_s = start.elapsed().as_secs_f64();
        }
        metrics.write(&r)?;
        if let Some(d) = diag.as_mut() {
            d.write(&r)?;
        }
        records.push(r);
    }
    if opts.diagnostics {
        if let Some(cb) = sim.quant_codebook() {
            dump::write_quant_codebook(&dir.join("quant_codebook.csv"), sim.round(), cb)?;
        }
    }
    let summary = summarize(&records);
    manifest.summary = Some(summary.clone());
    manifest.finished_unix_s = Some(unix_now());
    manifest.write(&manifest_path)?;
    Ok(summary)
}

/// Runs several labelled configs, each in `root/<label>`.
pub fn run_many(runs: &[(String, ScenarioConfig)], opts: &RunOptions, root: &Path) -> Result<Vec<(PathBuf, Summary)>> {
    let mut out = Vec::with_capacity(runs.len());
    for (label, cfg) in runs {
        let dir = if runs.len() == 1 { root.to_path_buf() } else { root.join(label) };
        let o = RunOptions {
            label: label.clone(),
            ..opts.clone()
        };
        out.push((dir.clone(), run_to_dir(cfg, &o, &dir)?));
    }
    Ok(out)
}

/// Writes a small FMNIST-shaped IDX pair into `dir`: 28x28 images whose class
/// shows as a bright horizontal band, plus pixel noise.
pub fn write_fixture(dir: &Path, samples: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut rng = stream(seed, Stream::Synthetic, 1, 0);
    let mut pixels = Vec::with_capacity(samples * 784);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = (i % 10) as u8;
        let band = 2 + 2 * label as usize..5 + 2 * label as usize;
        for row in 0..28 {
            for _ in 0..28 {
                let base: u8 = if band.contains(&row) { 200 } else { 10 };
                pixels.push(base.saturating_add(rng.random_range(0..40)));
            }
        }
        labels.push(label);
    }
    let images = IdxImages {
        rows: 28,
        cols: 28,
        pixels,
    };
    idx::write_images(&dir.join(idx::TRAIN_IMAGES), &images)?;
    idx::write_labels(&dir.join(idx::TRAIN_LABELS), &labels)
}
