//! Full run configuration.

use alloc::string::String;

use crate::channel::ChannelConfig;
use crate::decoder::DecoderConfig;
use crate::mdaircomp::MdAirCompConfig;
use crate::model::{Architecture, TrainConfig};
use crate::quantizer::QuantConfig;
use crate::selection::{SelectionConfig, Strategy};
use crate::{Error, Result};

/// How updates reach the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scenario {
    /// Raw updates, error-free.
    Perfect,
    /// Quantized updates, exact types.
    PerfectQuant,
    /// Quantized updates over D-MIMO with the AMP type decoder.
    Tuma,
    /// Quantized updates with pre-equalized MD-AirComp.
    Mdaircomp,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Perfect => "perfect",
            Scenario::PerfectQuant => "perfect_quant",
            Scenario::Tuma => "tuma",
            Scenario::Mdaircomp => "mdaircomp",
        }
    }

    pub fn quantized(self) -> bool {
        self != Scenario::Perfect
    }
}

impl core::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Scenario::Perfect),
            "perfect_quant" => Ok(Scenario::PerfectQuant),
            "tuma" => Ok(Scenario::Tuma),
            "mdaircomp" => Ok(Scenario::Mdaircomp),
            other => Err(Error::config(
                "scenario",
                alloc::format!("unknown scenario `{other}` (expected perfect, perfect_quant, tuma or mdaircomp)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DataSource {
    /// FMNIST IDX files from `data.fmnist_dir`.
    Fmnist,
    /// Gaussian blobs, see [`SyntheticConfig`].
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticConfig {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            classes: 10,
            dim: 10,
            separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the four FMNIST IDX files.
    pub fmnist_dir: String,
    pub synthetic: SyntheticConfig,
    /// Train, validation and test ratios.
    pub split: [f64; 3],
    pub dirichlet_alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Fmnist,
            fmnist_dir: String::from("data/fmnist"),
            synthetic: SyntheticConfig::default(),
            split: [0.8, 0.1, 0.1],
            dirichlet_alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Number of rounds T.
    pub rounds: usize,
    /// Global learning rate.
    pub global_lr: f64,
    pub model: Architecture,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub data: DataConfig,
    pub quant: QuantConfig,
    pub channel: ChannelConfig,
    pub decoder: DecoderConfig,
    pub mdaircomp: MdAirCompConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Perfect,
            seed: 1,
            rounds: 500,
            global_lr: 1.0,
            model: Architecture::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            data: DataConfig::default(),
            quant: QuantConfig::default(),
            channel: ChannelConfig::default(),
            decoder: DecoderConfig::default(),
            mdaircomp: MdAirCompConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn strategy(&self) -> Strategy {
        self.selection.strategy
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.selection.validate()?;
        self.quant.validate()?;
        self.channel.validate()?;
        self.decoder.validate()?;
        self.mdaircomp.validate()?;
        if !(self.global_lr >= 0.0 && self.global_lr.is_finite()) {
            return Err(Error::config("global_lr", "must be finite and non-negative"));
        }
        if self.data.split.iter().any(|r| !(*r > 0.0)) || (self.data.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("data.split", "ratios must be positive and sum to 1"));
        }
        if !(self.data.dirichlet_alpha > 0.0 && self.data.dirichlet_alpha.is_finite()) {
            return Err(Error::config("data.dirichlet_alpha", "must be positive"));
        }
        let syn = &self.data.synthetic;
        if self.data.source == DataSource::Synthetic {
            if syn.samples == 0 || syn.classes == 0 || syn.dim == 0 {
                return Err(Error::config("data.synthetic", "samples, classes and dim must be positive"));
            }
            if syn.dim != self.model.input_dim {
                return Err(Error::config("model.input_dim", "must equal data.synthetic.dim"));
            }
            if syn.classes > self.model.output_dim {
                return Err(Error::config("model.output_dim", "must be at least data.synthetic.classes"));
            }
        }
        Ok(())
    }
}
