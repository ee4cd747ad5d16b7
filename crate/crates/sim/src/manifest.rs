//! Run manifests: everything needed to repeat a run bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ufl_core::config::ScenarioConfig;

use crate::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub rounds: usize,
    pub final_accuracy: f64,
    /// First round reaching 70 % test accuracy, absent if never reached.
    pub rounds_to_70: Option<usize>,
    pub selected_mean: f64,
    pub selected_sd: f64,
    pub decode_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub label: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    /// File name of the geometry dump inside the run directory.
    pub geometry_dump: Option<String>,
    pub summary: Option<Summary>,
    pub config: ScenarioConfig,
}

impl RunManifest {
    pub fn new(label: &str, cfg: &ScenarioConfig, threads: usize) -> Self {
        Self {
            label: label.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            threads,
            started_unix_s: unix_now(),
            finished_unix_s: None,
            geometry_dump: None,
            summary: None,
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        // validates the seed range
        crate::settings::to_table(&self.config)?;
        toml::to_string_pretty(self).map_err(|e| SimError::config("manifest", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: RunManifest = toml::from_str(text).map_err(|e| SimError::config("manifest", e.message().to_string()))?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| SimError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| SimError::io(path, e))?)
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{preset, SINGLE};

    #[test]
    fn manifest_roundtrip_for_every_preset() {
        for name in SINGLE {
            let cfg = preset(name).unwrap().remove(0).1;
            let mut m = RunManifest::new(name, &cfg, 1);
            m.geometry_dump = Some("geometry.csv".into());
            m.summary = Some(Summary {
                rounds: 3,
                final_accuracy: 0.5,
                rounds_to_70: None,
                selected_mean: 9.5,
                selected_sd: 0.5,
                decode_failures: 0,
            });
            let back = RunManifest::from_toml(&m.to_toml().unwrap()).unwrap();
            assert_eq!(back, m, "{name}");
        }
    }
}
