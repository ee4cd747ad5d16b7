use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ufl-sim");

fn ufl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("UFL_SIM_SEED").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// A desk-scale run cut to a few rounds.
fn tiny(dir: &Path, extra: &[&str]) -> Output {
    let d = dir.to_str().unwrap();
    let mut args = vec![
        "run", "--desk-scale", "--no-timing", "--output-dir", d,
        "--set", "rounds=3",
        "--set", "data.synthetic.samples=2000",
    ];
    args.extend_from_slice(extra);
    ufl(&args)
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    ok(&tiny(dir.path(), &[]));
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,test_accuracy,test_loss,num_active,num_candidates,num_selected,L_hat,theta,mean_tv_type_error,wall_time_s"
    );
    assert_eq!(lines.count(), 3);
    let recs = ufl_sim::metrics::read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(recs.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(recs.iter().all(|r| r.num_selected <= r.num_candidates && r.num_candidates <= r.num_active));
    let m = ufl_sim::manifest::RunManifest::read(&dir.path().join("manifest.toml")).unwrap();
    assert_eq!(m.config.rounds, 3);
    assert_eq!(m.summary.unwrap().rounds, 3);
}

#[test]
fn reruns_and_replays_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let scen = ["--scenario", "tuma", "--set", "channel.blocklength=10", "--threads", "2"];
    ok(&tiny(a.path(), &scen));
    ok(&tiny(b.path(), &scen[..4]));
    let csv = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(csv(a.path()), csv(b.path()), "thread count changed the results");
    let manifest = a.path().join("manifest.toml");
    ok(&ufl(&["replay", manifest.to_str().unwrap(), "--no-timing", "--output-dir", c.path().to_str().unwrap()]));
    assert_eq!(csv(a.path()), csv(c.path()));
}

#[test]
fn diagnostics_dump_geometry_and_codebooks() {
    let dir = tempfile::tempdir().unwrap();
    ok(&tiny(dir.path(), &["--scenario", "mdaircomp", "--diagnostics", "--set", "channel.blocklength=8"]));
    for f in ["geometry.csv", "comm_codebook.csv", "quant_codebook.csv", "diagnostics.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let geo = fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    assert_eq!(geo.lines().filter(|l| l.starts_with("ap,")).count(), 40);
    assert_eq!(geo.lines().filter(|l| l.starts_with("client,")).count(), 100);
    let qcb = fs::read_to_string(dir.path().join("quant_codebook.csv")).unwrap();
    assert_eq!(qcb.lines().count(), 1 + 16);
}

#[test]
fn env_vars_apply_and_flags_win() {
    let a = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["show", "--desk-scale", "--seed", "9"])
        .env("UFL_SIM_SEED", "4")
        .env("UFL_SIM_SCENARIO", "perfect_quant")
        .output()
        .unwrap();
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("scenario = \"perfect_quant\""), "{text}");
    drop(a);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "rounds = 7\n[channel]\nblocklength = 50\n").unwrap();
    let out = ufl(&["show", "--preset", "fig2-N10", "--config", cfg.to_str().unwrap(), "--set", "channel.blocklength=20"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rounds = 7") && text.contains("blocklength = 20") && text.contains("bits = 7"), "{text}");
}

#[test]
fn bad_input_fails_with_a_message() {
    let out = ufl(&["show", "--set", "selection.stepp=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection.stepp"));
    let out = ufl(&["show", "--set", "selection.step=-0.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection.step"));
    let out = ufl(&["run", "--preset", "nope"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("table1-tuma-self"));
    let dir = tempfile::tempdir().unwrap();
    let out = ufl(&["run", "--output-dir", dir.path().to_str().unwrap(), "--set", "data.fmnist_dir=\"/nonexistent\""]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent"));
}

#[test]
fn presets_are_listed() {
    let out = ufl(&["presets"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for p in ["table1-perfect-noquant", "table1-mdaircomp-self", "fig2-N50", "fig4-sweep", "desk-scale"] {
        assert!(text.contains(p), "{p}");
    }
}

#[test]
fn fixture_feeds_an_idx_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fmnist");
    ok(&ufl(&["fixture", "--out-dir", data.to_str().unwrap(), "--samples", "400"]));
    let out_dir = dir.path().join("run");
    let fmnist = format!("data.fmnist_dir=\"{}\"", data.display());
    ok(&ufl(&[
        "run", "--no-timing", "--output-dir", out_dir.to_str().unwrap(),
        "--set", &fmnist,
        "--set", "rounds=2",
        "--set", "model.hidden_dims=[8, 6]",
        "--set", "selection.num_clients=10",
        "--set", "selection.target=3",
        "--set", "selection.candidates=6",
        "--set", "train.epochs=2",
    ]));
    let recs = ufl_sim::metrics::read_metrics(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(recs.len(), 2);
}
