//! Named experiment presets and the desk-scale reduction.

use ufl_core::config::{DataSource, Scenario, ScenarioConfig, SyntheticConfig};
use ufl_core::selection::Strategy;

use crate::{Result, SimError};

/// Single-run presets, one per reported table row plus the blocklength study.
pub const SINGLE: &[&str] = &[
    "table1-perfect-noquant",
    "table1-perfect-quant",
    "table1-tuma-self",
    "table1-tuma-poc",
    "table1-tuma-random",
    "table1-mdaircomp-self",
    "table1-tuma-j5-self",
    "table1-tuma-n20-self",
    "fig2-N10",
    "fig2-N20",
    "fig2-N50",
    "desk-scale",
];

/// Presets that expand into several runs.
pub const SWEEPS: &[&str] = &["fig4-sweep"];

pub const FIG4_BITS: std::ops::RangeInclusive<u32> = 2..=12;
pub const FIG4_BLOCKLENGTHS: [usize; 2] = [20, 50];
pub const FIG4_ROUNDS: usize = 100;

fn names() -> String {
    SINGLE.iter().chain(SWEEPS).copied().collect::<Vec<_>>().join(", ")
}

fn tuma(strategy: Strategy, bits: u32, n: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.scenario = Scenario::Tuma;
    c.selection.strategy = strategy;
    c.quant.bits = bits;
    c.quant.dim = 30;
    c.channel.blocklength = n;
    c
}

/// Expands a preset into labelled runs. Single presets yield one run labelled
/// with the preset name.
pub fn preset(name: &str) -> Result<Vec<(String, ScenarioConfig)>> {
    let one = |c: ScenarioConfig| Ok(vec![(name.to_string(), c)]);
    match name {
        "table1-perfect-noquant" => one(ScenarioConfig::default()),
        "table1-perfect-quant" => {
            let mut c = ScenarioConfig::default();
            c.scenario = Scenario::PerfectQuant;
            one(c)
        }
        "table1-tuma-self" => one(tuma(Strategy::SelfSelect, 7, 50)),
        "table1-tuma-poc" => one(tuma(Strategy::Poc, 7, 50)),
        "table1-tuma-random" => one(tuma(Strategy::Random, 7, 50)),
        "table1-mdaircomp-self" => {
            let mut c = tuma(Strategy::SelfSelect, 7, 50);
            c.scenario = Scenario::Mdaircomp;
            one(c)
        }
        "table1-tuma-j5-self" => one(tuma(Strategy::SelfSelect, 5, 50)),
        "table1-tuma-n20-self" => one(tuma(Strategy::SelfSelect, 7, 20)),
        "fig2-N10" => one(tuma(Strategy::SelfSelect, 7, 10)),
        "fig2-N20" => one(tuma(Strategy::SelfSelect, 7, 20)),
        "fig2-N50" => one(tuma(Strategy::SelfSelect, 7, 50)),
        "desk-scale" => {
            let mut c = ScenarioConfig::default();
            desk_scale(&mut c);
            one(c)
        }
        "fig4-sweep" => {
            let mut runs = Vec::new();
            for n in FIG4_BLOCKLENGTHS {
                for j in FIG4_BITS {
                    let mut c = tuma(Strategy::SelfSelect, j, n);
                    c.rounds = FIG4_ROUNDS;
                    runs.push((format!("fig4-J{j}-N{n}"), c));
                }
            }
            Ok(runs)
        }
        _ => Err(SimError::UnknownPreset {
            name: name.to_string(),
            valid: names(),
        }),
    }
}

/// Factor applied to the client population, the participation target and the
/// candidate pool.
pub const DESK_CLIENT_FACTOR: usize = 10;
pub const DESK_ROUNDS: usize = 150;
/// Bits removed from the quantizer so the codebook stays well below the
/// number of server subvectors of the small model.
pub const DESK_BIT_REDUCTION: u32 = 3;

/// Shrinks a paper-scale config to something that finishes in minutes on one
/// core:
///
/// * clients, target and candidate pool divided by [`DESK_CLIENT_FACTOR`]
///   (1000/100/200 become 100/10/20);
/// * at most [`DESK_ROUNDS`] rounds;
/// * 10 000 synthetic samples of 10-dimensional Gaussian blobs replace FMNIST,
///   so the model input shrinks from 784 to 10 and W from 52 500 to 2 964;
/// * quantizer bits reduced by [`DESK_BIT_REDUCTION`] (at least 1);
/// * local training and controller retuned for the small problem: E = 10,
///   V = 32, learning rate 0.004, threshold step 0.01; the partition uses a
///   Dirichlet concentration of 0.1 so that client choice matters with only
///   100 clients.
///
/// The channel (geometry, blocklength, SNR) is left untouched.
pub fn desk_scale(c: &mut ScenarioConfig) {
    let s = &mut c.selection;
    s.num_clients = (s.num_clients / DESK_CLIENT_FACTOR).max(1);
    s.target = (s.target / DESK_CLIENT_FACTOR).clamp(1, s.num_clients);
    s.candidates = (s.candidates / DESK_CLIENT_FACTOR).max(1);
    s.step = 0.01;
    c.rounds = c.rounds.min(DESK_ROUNDS);
    c.data.source = DataSource::Synthetic;
    c.data.synthetic = SyntheticConfig {
        samples: 10_000,
        classes: 10,
        dim: 10,
        separation: 4.0,
    };
    c.data.dirichlet_alpha = 0.1;
    c.model.input_dim = 10;
    c.train.epochs = 10;
    c.train.batch_size = 32;
    c.train.learning_rate = 0.004;
    c.quant.bits = c.quant.bits.saturating_sub(DESK_BIT_REDUCTION).max(1);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in SINGLE.iter().chain(SWEEPS) {
            for (label, mut c) in preset(name).unwrap() {
                c.validate().unwrap_or_else(|e| panic!("{label}: {e}"));
                desk_scale(&mut c);
                c.validate().unwrap_or_else(|e| panic!("{label} (desk): {e}"));
            }
        }
    }

    #[test]
    fn table_rows() {
        let c = &preset("table1-tuma-self").unwrap()[0].1;
        assert_eq!((c.quant.bits, c.quant.dim, c.channel.blocklength), (7, 30, 50));
        assert_eq!((c.scenario, c.selection.strategy), (Scenario::Tuma, Strategy::SelfSelect));
        let c = &preset("table1-perfect-noquant").unwrap()[0].1;
        assert_eq!((c.scenario, c.selection.strategy), (Scenario::Perfect, Strategy::SelfSelect));
        let c = &preset("fig2-N10").unwrap()[0].1;
        assert_eq!((c.quant.bits, c.quant.dim, c.channel.blocklength), (7, 30, 10));
    }

    #[test]
    fn sweep_grid() {
        let runs = preset("fig4-sweep").unwrap();
        assert_eq!(runs.len(), 22);
        assert!(runs.iter().all(|(_, c)| c.rounds == 100));
        let grid: Vec<(u32, usize)> = runs.iter().map(|(_, c)| (c.quant.bits, c.channel.blocklength)).collect();
        assert!(grid.contains(&(2, 20)) && grid.contains(&(12, 50)));
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("table9").unwrap_err().to_string();
        assert!(err.contains("table1-tuma-self") && err.contains("fig4-sweep"), "{err}");
    }

    #[test]
    fn desk_scale_sizes() {
        let mut c = ScenarioConfig::default();
        desk_scale(&mut c);
        assert_eq!((c.selection.num_clients, c.selection.target, c.selection.candidates), (100, 10, 20));
        assert_eq!(c.rounds, 150);
        assert_eq!(c.model.num_params(), 2964);
        assert_eq!(c.quant.bits, 4);
    }
}
