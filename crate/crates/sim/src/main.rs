use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ufl_core::config::{Scenario, ScenarioConfig};
use ufl_core::selection::Strategy;
use ufl_sim::manifest::RunManifest;
use ufl_sim::presets::{self, desk_scale};
use ufl_sim::runner::{run_many, run_to_dir, write_fixture, RunOptions};
use ufl_sim::settings::{from_table, merge, parse_config, read_table, to_table};

/// Federated learning over a distributed-MIMO uplink with type-based unsourced
/// multiple access.
///
/// Every `run` flag can also be set through an environment variable with the
/// `UFL_SIM_` prefix, e.g. `UFL_SIM_SEED=3`. Flags win over the environment.
#[derive(Parser, Debug)]
#[command(name = "ufl-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment (or every point of a sweep preset).
    Run(RunArgs),
    /// Re-run the config stored in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = "replay")]
        output_dir: PathBuf,
        #[arg(long)]
        no_timing: bool,
    },
    /// List the available presets.
    Presets,
    /// Print the resolved config as TOML without running it.
    Show(RunArgs),
    /// Write a small FMNIST-shaped IDX fixture.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; keys not given keep the preset or default value.
    #[arg(long, env = "UFL_SIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "UFL_SIM_PRESET")]
    preset: Option<String>,
    #[arg(long, env = "UFL_SIM_SELECTION")]
    selection: Option<Strategy>,
    #[arg(long, env = "UFL_SIM_SCENARIO")]
    scenario: Option<Scenario>,
    #[arg(long, env = "UFL_SIM_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "UFL_SIM_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long, env = "UFL_SIM_OUTPUT_DIR", default_value = "runs")]
    output_dir: PathBuf,
    /// Shrink the population, rounds, model and data for a quick run.
    #[arg(long, env = "UFL_SIM_DESK_SCALE")]
    desk_scale: bool,
    /// Write 0 in the wall_time_s column so reruns compare byte for byte.
    #[arg(long, env = "UFL_SIM_NO_TIMING")]
    no_timing: bool,
    /// Also dump geometry, codebooks and per-round decoder counts.
    #[arg(long, env = "UFL_SIM_DIAGNOSTICS")]
    diagnostics: bool,
    /// Dotted override applied last, e.g. `--set channel.blocklength=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(args: &RunArgs) -> anyhow::Result<Vec<(String, ScenarioConfig)>> {
    let bases = match &args.preset {
        Some(name) => presets::preset(name)?,
        None => vec![("run".to_string(), ScenarioConfig::default())],
    };
    let mut flags = Vec::new();
    if let Some(s) = args.selection {
        flags.push(format!("selection.strategy=\"{}\"", s.name()));
    }
    if let Some(s) = args.scenario {
        flags.push(format!("scenario=\"{}\"", s.name()));
    }
    if let Some(s) = args.seed {
        flags.push(format!("seed={s}"));
    }
    flags.extend(args.set.iter().cloned());
    let file = args.config.as_deref().map(read_table).transpose()?;

    let mut out = Vec::with_capacity(bases.len());
    for (label, mut base) in bases {
        if args.desk_scale {
            desk_scale(&mut base);
        }
        let cfg = match &file {
            Some(t) => {
                let mut table = to_table(&base)?;
                merge(&mut table, t.clone(), "")?;
                let merged = from_table(table)?;
                parse_config(&merged, None, &flags)?
            }
            None => parse_config(&base, None, &flags)?,
        };
        out.push((label, cfg));
    }
    Ok(out)
}

fn options(args: &RunArgs) -> RunOptions {
    RunOptions {
        label: "run".into(),
        threads: args.threads,
        timing: !args.no_timing,
        diagnostics: args.diagnostics,
    }
}

fn print_summary(dir: &std::path::Path, s: &ufl_sim::manifest::Summary) {
    let r70 = s.rounds_to_70.map_or("-".to_string(), |r| r.to_string());
    println!(
        "{}: final accuracy {:.4}, rounds to 70% {}, |S| {:.1}±{:.1}, decode failures {}",
        dir.display(),
        s.final_accuracy,
        r70,
        s.selected_mean,
        s.selected_sd,
        s.decode_failures
    );
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        // `ufl-sim show | head` closes the pipe early; that is not an error.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let runs = resolve(&args)?;
            for (dir, summary) in run_many(&runs, &options(&args), &args.output_dir)? {
                print_summary(&dir, &summary);
            }
        }
        Command::Show(args) => {
            let mut out = std::io::stdout().lock();
            for (label, cfg) in resolve(&args)? {
                writeln!(out, "# {label}\n{}", ufl_sim::settings::to_toml_string(&cfg)?)?;
            }
        }
        Command::Replay { manifest, output_dir, no_timing } => {
            let m = RunManifest::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let opts = RunOptions {
                label: m.label.clone(),
                threads: m.threads,
                timing: !no_timing,
                diagnostics: m.geometry_dump.is_some(),
            };
            let s = run_to_dir(&m.config, &opts, &output_dir)?;
            print_summary(&output_dir, &s);
        }
        Command::Presets => {
            for p in presets::SINGLE {
                println!("{p}");
            }
            for p in presets::SWEEPS {
                println!("{p} (sweep)");
            }
        }
        Command::Fixture { out_dir, samples, seed } => {
            write_fixture(&out_dir, samples, seed)?;
            println!("wrote {samples} samples to {}", out_dir.display());
        }
    }
    Ok(())
}
