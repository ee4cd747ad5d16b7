//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 3 8`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ufl_core::channel::{
    calibrate_noise, draw_channels, received_from_channels, ChannelConfig, CommCodebook, Geometry, SubroundTransmission,
};
use ufl_core::config::{Scenario, ScenarioConfig};
use ufl_core::decoder::{amp_decode, denoise_row, truncated_poisson, tv_distance, DecoderConfig, TypeEstimate};
use ufl_core::model::{Architecture, Mlp, Mode, ModelParams};
use ufl_core::orchestrator::{
    aggregate_from_type, aggregate_perfect, run_training, FederatedData, Subround, TumaChannel, TypeChannel,
};
use ufl_core::quantizer::{dequantize, quantize_update, QuantCodebook};
use ufl_core::rng::{stream, Stream};
use ufl_core::selection::{activate, candidate_gate, self_select, SelectionConfig, Strategy, ThresholdState};
use ufl_sim::idx;
use ufl_sim::presets::desk_scale;
use ufl_sim::runner::{load_dataset, write_fixture};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

const SEEDS: [u64; 3] = [1, 2, 3];

// 1
fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let archs = [
        Architecture { input_dim: 3, hidden_dims: vec![2], output_dim: 3, dropout_rate: 0.0 },
        Architecture { input_dim: 4, hidden_dims: vec![3, 2], output_dim: 3, dropout_rate: 0.5 },
        Architecture { input_dim: 2, hidden_dims: vec![4, 3], output_dim: 2, dropout_rate: 0.0 },
    ];
    let eps = 1e-4;
    for (i, arch) in archs.iter().enumerate() {
        let mlp = Mlp::new(arch.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let w = ModelParams((0..arch.num_params()).map(|_| 0.8 * gauss(&mut rng)).collect());
        let batch = 5;
        let x: Vec<f64> = (0..batch * arch.input_dim).map(|_| gauss(&mut rng)).collect();
        let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..arch.output_dim as u8)).collect();
        // eval mode keeps the loss a deterministic function of w
        let (_, g) = mlp.loss_and_grad(&w, &x, &y, Mode::Eval, &mut rng).unwrap();
        for p in 0..w.len() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.0[p] += eps;
            minus.0[p] -= eps;
            let lp = mlp.loss_and_grad(&plus, &x, &y, Mode::Eval, &mut rng).unwrap().0;
            let lm = mlp.loss_and_grad(&minus, &x, &y, Mode::Eval, &mut rng).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - g[p]).abs() / fd.abs().max(g[p].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    outcome(worst < 1e-3, format!("max relative error {worst:.2e} (limit 1e-3)"))
}

// 2
fn quantizer_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (q, m, w) = (5, 16, 103);
    let cb = QuantCodebook::new(q, (0..q * m).map(|_| gauss(&mut rng)).collect()).unwrap();

    let mut exact = true;
    let mut residual: f64 = 0.0;
    let mut e = vec![0.0; w];
    let mut sum_q = vec![0.0; w];
    let mut sum_d = vec![0.0; w];
    for _ in 0..20 {
        let delta: Vec<f64> = (0..w).map(|_| 0.5 * gauss(&mut rng)).collect();
        let r = quantize_update(&delta, &e, &cb).unwrap();
        for i in 0..w {
            let s = delta[i] + e[i];
            exact &= r.new_error[i] == s - r.quantized[i];
            residual = residual.max((r.quantized[i] + r.new_error[i] - s).abs() / s.abs().max(1.0));
            sum_q[i] += r.quantized[i];
            sum_d[i] += delta[i];
        }
        e = r.new_error;
    }
    let telescope = (0..w).map(|i| (sum_q[i] - (sum_d[i] - e[i])).abs()).fold(0.0, f64::max);

    let mut optimal = true;
    for _ in 0..1000 {
        let s: Vec<f64> = (0..q).map(|_| 2.0 * gauss(&mut rng)).collect();
        let got = cb.encode(&s);
        let d = |j: usize| cb.codeword(j).iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..m).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap();
        optimal &= d(got) <= d(best);
    }
    outcome(
        exact && residual <= 2.0 * f64::EPSILON && telescope < 1e-9 && optimal,
        format!(
            "error == (delta + e_prev) - quantized bitwise: {exact}, |q + e - s| <= {residual:.1e} relative; telescoping gap {telescope:.1e} (limit 1e-9); nearest codeword on 1000 draws: {optimal}"
        ),
    )
}

// 3
fn denoiser_bayes_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut post_err: f64 = 0.0;
    let mut mean_err: f64 = 0.0;
    let mut norm_err: f64 = 0.0;
    for _ in 0..100 {
        let blocks = rng.random_range(1..5);
        let a = rng.random_range(1..5);
        let kmax = rng.random_range(1..9);
        let var: Vec<f64> = (0..blocks).map(|_| rng.random_range(0.01..3.0)).collect();
        let tau2 = rng.random_range(0.05..2.0);
        let mut prior: Vec<f64> = (0..=kmax).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = prior.iter().sum();
        prior.iter_mut().for_each(|p| *p /= s);
        let k_true = rng.random_range(0..=kmax) as f64;
        let r: Vec<Complex64> = (0..blocks * a)
            .map(|f| {
                let sd = ((k_true * var[f / a] + tau2) / 2.0).sqrt();
                Complex64::new(sd * gauss(&mut rng), sd * gauss(&mut rng))
            })
            .collect();
        let out = denoise_row(&r, tau2, &var, a, &prior).unwrap();

        // direct evaluation of prior times complex Gaussian likelihood per coordinate
        let logp: Vec<f64> = (0..=kmax)
            .map(|k| {
                let mut l = prior[k].ln();
                for (f, v) in r.iter().enumerate() {
                    let s2 = k as f64 * var[f / a] + tau2;
                    l += -(std::f64::consts::PI * s2).ln() - v.norm_sqr() / s2;
                }
                l
            })
            .collect();
        let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logp.iter().map(|l| (l - top).exp()).sum();
        let post: Vec<f64> = logp.iter().map(|l| (l - top).exp() / z).collect();
        for k in 0..=kmax {
            post_err = post_err.max((post[k] - out.posterior[k]).abs());
        }
        norm_err = norm_err.max((out.posterior.iter().sum::<f64>() - 1.0).abs());
        for (f, v) in r.iter().enumerate() {
            let gain: f64 = (0..=kmax).map(|k| post[k] * k as f64 * var[f / a] / (k as f64 * var[f / a] + tau2)).sum();
            mean_err = mean_err.max((v * gain - out.xhat[f]).norm());
        }
    }
    outcome(
        post_err <= 1e-10 && norm_err <= 1e-10 && mean_err <= 1e-10,
        format!("posterior error {post_err:.1e}, normalization error {norm_err:.1e}, posterior-mean error {mean_err:.1e} (limit 1e-10)"),
    )
}

// 4
fn amp_exact_recovery() -> Outcome {
    let n = 128;
    let g = Geometry::build(&ChannelConfig { grid: 1, ..ChannelConfig::default() });
    let mut re = vec![0.0; n * n];
    for j in 0..n {
        re[j * n + j] = 1.0;
    }
    let cb = CommCodebook { n, zones: 1, per_zone: n, re, im: vec![0.0; n * n] };
    let cfg = DecoderConfig::default();
    let lsfc = cfg.zone_profiles(&g);
    let prior = truncated_poisson(1.0 / n as f64, cfg.k_max).unwrap();
    let mut exact = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(0..n);
        let tx = SubroundTransmission { sends: vec![(0, m)] };
        // at the centroid the zone's LSFC profile describes the client
        let h = draw_channels(&g.centroids, &g, &mut rng);
        let sig = received_from_channels(&tx, &h, &cb, 1e-3, 0.0, g.num_antennas(), &mut rng);
        let mut want = vec![0u32; n];
        want[m] = 1;
        if let Ok(out) = amp_decode(&sig, &cb, &lsfc, g.antennas_per_ap, &prior, &cfg) {
            exact += (out.estimate.global == want) as usize;
        }
    }
    outcome(exact == 50, format!("{exact}/50 seeds recovered k exactly (N = M = 128, U = 1, noiseless, client at the zone centroid)"))
}

// 5
fn aggregation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let l = rng.random_range(1..=20);
        let m = 1usize << rng.random_range(0..=4);
        let q: usize = rng.random_range(1..=6);
        let w: usize = rng.random_range(1..=40);
        let d = w.div_ceil(q);
        let eta = rng.random_range(0.1..2.0);
        let cb = QuantCodebook::new(q, (0..q * m).map(|_| gauss(&mut rng)).collect()).unwrap();
        let w0 = ModelParams((0..w).map(|_| gauss(&mut rng)).collect());
        let idx: Vec<Vec<u32>> = (0..l).map(|_| (0..d).map(|_| rng.random_range(0..m as u32)).collect()).collect();
        let updates: Vec<Vec<f64>> = idx.iter().map(|i| dequantize(i, &cb, w).unwrap()).collect();
        let want = aggregate_perfect(&w0, &updates, eta).unwrap();
        let mut got = w0.clone();
        for b in 0..d {
            let mut k = vec![0u32; m];
            for client in &idx {
                k[client[b] as usize] += 1;
            }
            let t = TypeEstimate::from_multiplicities(&k, 1, m);
            aggregate_from_type(&mut got.0[b * q..((b + 1) * q).min(w)], &t.types, &cb, eta).unwrap();
        }
        for (a, b) in got.0.iter().zip(&want.0) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.1e} over 200 instances (limit 1e-9)"))
}

// 6
fn threshold_controller() -> Outcome {
    let cfg = SelectionConfig::default();
    let mut sizes = Vec::new();
    let mut theta = ThresholdState::new(cfg.theta_init);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in 1..=300 {
        let active = activate(cfg.num_clients, cfg.activation_prob, &mut rng);
        let cand = candidate_gate(&active, cfg.candidates, cfg.activation_prob, cfg.num_clients, &mut rng).unwrap();
        let selected = cand
            .iter()
            .filter(|_| {
                let loss = rng.random_range(2.0..2.6);
                self_select(loss, theta.theta, cfg.steepness, &mut rng)
            })
            .count();
        theta.update(selected, cfg.target, cfg.step);
        if t >= 100 {
            sizes.push(selected as f64);
        }
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let rel = (mean - cfg.target as f64).abs() / cfg.target as f64;
    outcome(rel <= 0.15, format!("mean |S| over rounds 100-300 = {mean:.1} (target {}, +-15%)", cfg.target))
}

// 7
fn idx_parser() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 25, 7).unwrap();
    let ip = dir.path().join(idx::TRAIN_IMAGES);
    let lp = dir.path().join(idx::TRAIN_LABELS);
    let img_bytes = std::fs::read(&ip).unwrap();
    let lab_bytes = std::fs::read(&lp).unwrap();
    let images = idx::parse_images(&img_bytes).unwrap();
    let labels = idx::parse_labels(&lab_bytes).unwrap();
    let roundtrip = idx::encode_images(&images) == img_bytes && idx::encode_labels(&labels) == lab_bytes;
    let loaded = idx::load_idx(&ip, &lp).unwrap();
    let scaled = loaded.len() == 25 && loaded.dim() == 784 && loaded.features().iter().all(|v| (0.0..=1.0).contains(v));

    let fmnist_dir = std::env::var("UFL_FMNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fmnist"));
    let fm_images = fmnist_dir.join(idx::TRAIN_IMAGES);
    let fmnist = if fm_images.exists() {
        match idx::read_images(&fm_images) {
            Ok(im) if im.len() == 60_000 && im.rows == 28 && im.cols == 28 => "FMNIST header n=60000, 28x28 ok".to_string(),
            Ok(im) => return outcome(false, format!("FMNIST header: n={} {}x{}", im.len(), im.rows, im.cols)),
            Err(e) => return outcome(false, format!("FMNIST: {e}")),
        }
    } else {
        format!("FMNIST check skipped, no files in {}", fmnist_dir.display())
    };
    outcome(roundtrip && scaled, format!("fixture byte round-trip: {roundtrip}, scaled load: {scaled}; {fmnist}"))
}

// 8
fn type_estimation_monotone() -> Outcome {
    let g = Arc::new(Geometry::build(&ChannelConfig::default()));
    let dec = DecoderConfig::default();
    let (u, m, clients) = (g.num_zones(), 128, 100);
    let noise = calibrate_noise(10.0, 1e-3, &g);
    let prior = truncated_poisson(clients as f64 / (u * m) as f64, dec.k_max).unwrap();
    let mut medians = Vec::new();
    for n in [10, 20, 50] {
        let mut per_seed = Vec::new();
        for seed in SEEDS {
            let ch = TumaChannel {
                geometry: g.clone(),
                codebook: Arc::new(CommCodebook::generate(n, u, m, &mut stream(seed, Stream::CommCodebook, 0, n as u64))),
                zone_lsfc: dec.zone_profiles(&g),
                prior: prior.clone(),
                decoder: dec.clone(),
                power: 1e-3,
                noise_var: noise,
            };
            let mut tv = 0.0;
            for d in 0..50 {
                let mut rng = stream(seed, Stream::Synthetic, n as u64, d);
                let pos = g.place_clients(clients, &mut rng);
                let tx = SubroundTransmission {
                    sends: pos.iter().map(|&p| (g.zone_of(p), rng.random_range(0..m))).collect(),
                };
                let sub = Subround { round: 0, index: d as usize, tx: &tx, positions: &pos };
                let r = ch.deliver(&sub, &mut stream(seed, Stream::Channel, n as u64, d)).unwrap();
                tv += tv_distance(&r.estimate.types, &r.truth.types);
            }
            per_seed.push(tv / 50.0);
        }
        medians.push((n, median(per_seed)));
    }
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let shown: Vec<String> = medians.iter().map(|(n, tv)| format!("N={n}: {tv:.3}")).collect();
    outcome(decreasing, format!("median mean TV over 50 subrounds, M=1152, F=160, 10 dB: {}", shown.join(", ")))
}

fn desk(scenario: Scenario, strategy: Strategy, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    desk_scale(&mut c);
    c.scenario = scenario;
    c.selection.strategy = strategy;
    c.seed = seed;
    c
}

struct DeskRun {
    accuracy: f64,
    tv: f64,
}

fn run_desk(cfg: &ScenarioConfig) -> DeskRun {
    let full = load_dataset(cfg).unwrap();
    let data = FederatedData::build(&full, cfg).unwrap();
    let (recs, _) = run_training(cfg, &data, |_| {}).unwrap();
    let tvs: Vec<f64> = recs.iter().map(|r| r.mean_tv_type_error).filter(|v| v.is_finite()).collect();
    DeskRun {
        accuracy: recs.last().map_or(f64::NAN, |r| r.test_accuracy),
        tv: if tvs.is_empty() { f64::NAN } else { tvs.iter().sum::<f64>() / tvs.len() as f64 },
    }
}

fn median_run(f: impl Fn(u64) -> ScenarioConfig) -> (f64, f64) {
    let runs: Vec<DeskRun> = SEEDS.iter().map(|&s| run_desk(&f(s))).collect();
    (median(runs.iter().map(|r| r.accuracy).collect()), median(runs.iter().map(|r| r.tv).collect()))
}

// 9
fn selection_ordering() -> Outcome {
    let acc = |s: Strategy| median_run(|seed| desk(Scenario::Perfect, s, seed)).0;
    let (random, poc, own) = (acc(Strategy::Random), acc(Strategy::Poc), acc(Strategy::SelfSelect));
    outcome(
        own >= random + 0.02 && (own - poc).abs() <= 0.03,
        format!("median final accuracy: self {own:.3}, random {random:.3}, PoC {poc:.3} (self >= random + 0.02, |self - PoC| <= 0.03)"),
    )
}

// 10
fn quantization_gap() -> Outcome {
    let perfect = median_run(|seed| desk(Scenario::Perfect, Strategy::SelfSelect, seed)).0;
    let quant = median_run(|seed| desk(Scenario::PerfectQuant, Strategy::SelfSelect, seed)).0;
    let chance = 0.1;
    outcome(
        quant < perfect && quant >= chance + 0.3 && perfect >= chance + 0.3,
        format!("median final accuracy: no quantization {perfect:.3}, quantized {quant:.3} (gap > 0, both >= {:.2})", chance + 0.3),
    )
}

/// Blocklength used for the desk-scale baseline comparison.
const BASELINE_N: usize = 10;

// 11
fn baseline_gap() -> Outcome {
    let with_n = |scenario, seed| {
        let mut c = desk(scenario, Strategy::SelfSelect, seed);
        c.channel.blocklength = BASELINE_N;
        c
    };
    let (tuma, tv) = median_run(|seed| with_n(Scenario::Tuma, seed));
    let (md, md_tv) = median_run(|seed| with_n(Scenario::Mdaircomp, seed));
    outcome(
        tv < 0.1 && md <= tuma - 0.03,
        format!("N={BASELINE_N}: TUMA accuracy {tuma:.3} (TV {tv:.3}, needs < 0.1), MD-AirComp {md:.3} (TV {md_tv:.3}); needs MD <= TUMA - 0.03"),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("1", "gradient check", gradient_check),
        ("2", "quantizer identities", quantizer_identities),
        ("3", "denoiser Bayes oracle", denoiser_bayes_oracle),
        ("4", "AMP exact recovery", amp_exact_recovery),
        ("5", "aggregation identity", aggregation_identity),
        ("6", "threshold controller", threshold_controller),
        ("7", "IDX parser", idx_parser),
        ("8", "type-estimation monotonicity", type_estimation_monotone),
        ("9", "selection ordering", selection_ordering),
        ("10", "quantization gap", quantization_gap),
        ("11", "baseline gap", baseline_gap),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let total = Instant::now();
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        failed += !o.pass as usize;
        println!(
            "[{}] {id:>2} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if wanted.is_empty() {
        println!("[SKIP] full reproduction: long-running, run the table1-* presets with ufl-sim");
    }
    println!("acceptance: {failed} failed ({:.0}s)", total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
