//! Multisource AMP decoding of per-zone codeword multiplicities.
//!
//! The unknowns are rescaled to `X' = sqrt(N P) X`, so the sensing matrix is the
//! unit-norm codebook `C` itself and the prior variance of a row with multiplicity
//! `k` in zone `u` is `k N P gamma_{u,b}` on the antennas of AP `b`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::channel::{CommCodebook, ReceivedSignal};
use crate::linalg::{axpy, axpy_conj, norm_sqr, CMat};
use crate::{Error, Result};

/// How the effective noise variance and the Onsager term are tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ResidualModel {
    /// One variance for the whole residual.
    Scalar,
    /// One variance and one Onsager coefficient per AP.
    PerAp,
}

/// Which per-zone LSFC profile the denoiser assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LsfcProfile {
    /// LSFCs evaluated at the zone centroid.
    Centroid,
    /// LSFCs averaged over a uniform position in the zone.
    ZoneAverage,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DecoderConfig {
    pub k_max: usize,
    pub max_iters: usize,
    /// Relative change of the estimate below which iterations stop.
    pub tol: f64,
    /// Weight of the new denoiser output in the damped update.
    pub damping: f64,
    pub residual: ResidualModel,
    pub lsfc: LsfcProfile,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            max_iters: 25,
            tol: 1e-6,
            damping: 0.7,
            residual: ResidualModel::PerAp,
            lsfc: LsfcProfile::ZoneAverage,
        }
    }
}

/// Quadrature resolution for [`LsfcProfile::ZoneAverage`].
pub const ZONE_AVERAGE_RESOLUTION: usize = 64;

impl DecoderConfig {
    /// Zone LSFC profiles (`U x B`) the denoiser uses for `geometry`.
    pub fn zone_profiles(&self, geometry: &crate::channel::Geometry) -> Vec<Vec<f64>> {
        match self.lsfc {
            LsfcProfile::Centroid => geometry.zone_profiles(),
            LsfcProfile::ZoneAverage => geometry.zone_average_profiles(ZONE_AVERAGE_RESOLUTION),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::config("decoder.k_max", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("decoder.max_iters", "must be at least 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::config("decoder.tol", "must be non-negative"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("decoder.damping", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Poisson(mu) probabilities renormalized over `0..=k_max`.
pub fn truncated_poisson(mu: f64, k_max: usize) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::config("decoder.prior", "Poisson mean must be positive"));
    }
    if k_max == 0 {
        return Err(Error::config("decoder.k_max", "must be at least 1"));
    }
    let mut logp = Vec::with_capacity(k_max + 1);
    let mut acc = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            acc += libm::log(mu) - libm::log(k as f64);
        }
        logp.push(acc);
    }
    Ok(softmax(&logp))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    p
}

/// Output of the Bayesian row denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDenoise {
    pub xhat: Vec<Complex64>,
    /// Posterior over the multiplicity, `0..=k_max`.
    pub posterior: Vec<f64>,
    /// Mean over coordinates of `d xhat_f / d r_f`.
    pub divergence: f64,
}

/// Bayesian denoiser for `r = x + v` with `v ~ CN(0, tau2 I)` and
/// `x | k ~ CN(0, k diag(block_var) (x) I_A)`.
///
/// `block_var[b]` is the per-unit-multiplicity variance on the antennas of block `b`;
/// `r` has `block_var.len() * antennas` entries, block-major.
pub fn denoise_row(r: &[Complex64], tau2: f64, block_var: &[f64], antennas: usize, prior: &[f64]) -> Result<RowDenoise> {
    if r.len() != block_var.len() * antennas {
        return Err(Error::dim("denoiser input", block_var.len() * antennas, r.len()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("denoiser input is not finite"));
    }
    if !(tau2 > 0.0) {
        return Err(Error::input("effective noise variance must be positive"));
    }
    let tables = BlockTables::new(block_var, &vec![tau2; block_var.len()], antennas, prior);
    let energy: Vec<f64> = r
        .chunks(antennas)
        .map(|c| c.iter().map(|v| v.norm_sqr()).sum())
        .collect();
    let mut scratch = RowScratch::new(prior.len(), block_var.len());
    tables.posterior(&energy, &mut scratch);
    tables.shrinkage(&energy, &mut scratch);
    let xhat = r
        .iter()
        .enumerate()
        .map(|(f, v)| v * scratch.gain[f / antennas])
        .collect();
    let div = scratch.div.iter().sum::<f64>() / r.len() as f64;
    Ok(RowDenoise {
        xhat,
        posterior: scratch.post,
        divergence: div,
    })
}

/// Per-zone quantities shared by every row in one iteration.
struct BlockTables {
    blocks: usize,
    antennas: usize,
    kmax1: usize,
    tau2: Vec<f64>,
    /// `log p(k) - A sum_b log(k v_b + tau_b^2)`, per k
    base: Vec<f64>,
    /// `1 / (k v_b + tau_b^2)`, k-major
    w: Vec<f64>,
}

struct RowScratch {
    post: Vec<f64>,
    gain: Vec<f64>,
    /// per-block sum of the coordinate derivatives
    div: Vec<f64>,
}

impl RowScratch {
    fn new(kmax1: usize, blocks: usize) -> Self {
        Self {
            post: vec![0.0; kmax1],
            gain: vec![0.0; blocks],
            div: vec![0.0; blocks],
        }
    }
}

impl BlockTables {
    fn new(block_var: &[f64], tau2: &[f64], antennas: usize, prior: &[f64]) -> Self {
        let blocks = block_var.len();
        let kmax1 = prior.len();
        let mut base = Vec::with_capacity(kmax1);
        let mut w = Vec::with_capacity(kmax1 * blocks);
        for (k, &p) in prior.iter().enumerate() {
            let mut logdet = 0.0;
            for b in 0..blocks {
                let var = k as f64 * block_var[b] + tau2[b];
                logdet += libm::log(var);
                w.push(1.0 / var);
            }
            base.push(libm::log(p) - antennas as f64 * logdet);
        }
        Self {
            blocks,
            antennas,
            kmax1,
            tau2: tau2.to_vec(),
            base,
            w,
        }
    }

    fn posterior(&self, energy: &[f64], s: &mut RowScratch) {
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.kmax1 {
            let wk = &self.w[k * self.blocks..(k + 1) * self.blocks];
            let quad: f64 = energy.iter().zip(wk).map(|(e, w)| e * w).sum();
            let l = self.base[k] - quad;
            s.post[k] = l;
            max = max.max(l);
        }
        let mut total = 0.0;
        for p in &mut s.post {
            *p = libm::exp(*p - max);
            total += *p;
        }
        for p in &mut s.post {
            *p /= total;
        }
    }

    /// Fills per-block gains `sum_k post_k k v_b w_kb` and divergence sums.
    fn shrinkage(&self, energy: &[f64], s: &mut RowScratch) {
        for b in 0..self.blocks {
            let mut mean_w = 0.0;
            let mut mean_w2 = 0.0;
            for k in 0..self.kmax1 {
                let w = self.w[k * self.blocks + b];
                mean_w += s.post[k] * w;
                mean_w2 += s.post[k] * w * w;
            }
            let t = self.tau2[b];
            // s_k = k v w_k = 1 - tau^2 w_k
            let gain = (1.0 - t * mean_w).max(0.0);
            let var_w = (mean_w2 - mean_w * mean_w).max(0.0);
            s.gain[b] = gain;
            s.div[b] = self.antennas as f64 * gain + energy[b] * t * var_w;
        }
    }

    fn map(post: &[f64]) -> u32 {
        let mut best = 0;
        for k in 1..post.len() {
            if post[k] > post[best] {
                best = k;
            }
        }
        best as u32
    }
}

/// Denoises one row of the effective observation in place of the AMP engine.
pub(crate) trait RowDenoiser {
    /// Writes the denoised row and the per-block sums of coordinate derivatives,
    /// and returns the MAP multiplicity.
    fn denoise(&mut self, row: usize, r_re: &[f64], r_im: &[f64], x_re: &mut [f64], x_im: &mut [f64], div: &mut [f64]) -> u32;

    /// Called once per iteration with the current per-block noise variances.
    fn prepare(&mut self, tau2: &[f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AmpOutcome {
    pub map: Vec<u32>,
    pub iterations: usize,
    pub tau2: f64,
}

/// Runs damped AMP for `Y = C X + W`. `c_re`/`c_im` hold the `cols` columns of
/// `C` contiguously; `Y` has `blocks * block_len` columns.
pub(crate) fn run_amp<D: RowDenoiser>(
    y: &CMat,
    c_re: &[f64],
    c_im: &[f64],
    cols: usize,
    block_len: usize,
    cfg: &DecoderConfig,
    den: &mut D,
) -> Result<AmpOutcome> {
    let n = y.rows;
    let f = y.cols;
    let blocks = f / block_len;
    let col = |j: usize| (&c_re[j * n..(j + 1) * n], &c_im[j * n..(j + 1) * n]);

    if y.norm_sqr() == 0.0 {
        // nothing received, nothing detected
        return Ok(AmpOutcome {
            map: vec![0; cols],
            iterations: 0,
            tau2: 0.0,
        });
    }
    let mut xhat = CMat::zeros(cols, f);
    let mut z = y.clone();
    let mut tau2 = residual_variance(&z, block_len, cfg.residual);
    check_tau(&tau2, 0)?;
    let mut r = CMat::zeros(cols, f);
    let mut new = CMat::zeros(cols, f);
    let mut div = vec![0.0; blocks];
    let mut row_div = vec![0.0; blocks];
    let mut map = vec![0u32; cols];
    let beta = cfg.damping;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        // R = X + C^H Z
        r.re.copy_from_slice(&xhat.re);
        r.im.copy_from_slice(&xhat.im);
        for j in 0..cols {
            let (cr, ci) = col(j);
            let (rr, ri) = r.row_mut(j);
            for i in 0..n {
                let (zr, zi) = z.row(i);
                axpy_conj(Complex64::new(cr[i], ci[i]), zr, zi, rr, ri);
            }
        }

        den.prepare(&tau2);
        div.iter_mut().for_each(|d| *d = 0.0);
        for j in 0..cols {
            let (rr, ri) = r.row(j);
            let s = j * f..(j + 1) * f;
            map[j] = den.denoise(j, rr, ri, &mut new.re[s.clone()], &mut new.im[s], &mut row_div);
            for (d, v) in div.iter_mut().zip(&row_div) {
                *d += v;
            }
        }

        let mut change = 0.0;
        let mut size = 0.0;
        for i in 0..cols * f {
            let nr = beta * new.re[i] + (1.0 - beta) * xhat.re[i];
            let ni = beta * new.im[i] + (1.0 - beta) * xhat.im[i];
            change += (nr - xhat.re[i]) * (nr - xhat.re[i]) + (ni - xhat.im[i]) * (ni - xhat.im[i]);
            size += nr * nr + ni * ni;
            xhat.re[i] = nr;
            xhat.im[i] = ni;
        }

        // Onsager coefficients, per block or shared
        let onsager: Vec<f64> = match cfg.residual {
            ResidualModel::PerAp => div.iter().map(|d| beta * d / (n as f64 * block_len as f64)).collect(),
            ResidualModel::Scalar => {
                let c = beta * div.iter().sum::<f64>() / (n as f64 * f as f64);
                vec![c; blocks]
            }
        };
        let mut z_next = y.clone();
        for i in 0..n {
            let (zr, zi) = z.row(i);
            let (nr, ni) = z_next.row_mut(i);
            for b in 0..blocks {
                let s = b * block_len..(b + 1) * block_len;
                for q in s {
                    nr[q] += onsager[b] * zr[q];
                    ni[q] += onsager[b] * zi[q];
                }
            }
        }
        for j in 0..cols {
            let (xr, xi) = xhat.row(j);
            if xr.iter().chain(xi).all(|v| *v == 0.0) {
                continue;
            }
            let (cr, ci) = col(j);
            for i in 0..n {
                let (nr, ni) = z_next.row_mut(i);
                axpy(Complex64::new(-cr[i], -ci[i]), xr, xi, nr, ni);
            }
        }
        z = z_next;
        tau2 = residual_variance(&z, block_len, cfg.residual);
        check_tau(&tau2, it)?;

        if change <= cfg.tol * cfg.tol * size {
            break;
        }
    }
    let mean_tau = tau2.iter().sum::<f64>() / tau2.len() as f64;
    Ok(AmpOutcome {
        map,
        iterations,
        tau2: mean_tau,
    })
}

fn residual_variance(z: &CMat, block_len: usize, model: ResidualModel) -> Vec<f64> {
    let n = z.rows;
    let f = z.cols;
    let blocks = f / block_len;
    let mut acc = vec![0.0; blocks];
    for i in 0..n {
        let (zr, zi) = z.row(i);
        for b in 0..blocks {
            let s = b * block_len..(b + 1) * block_len;
            acc[b] += norm_sqr(&zr[s.clone()], &zi[s]);
        }
    }
    match model {
        ResidualModel::PerAp => acc.iter().map(|a| a / (n * block_len) as f64).collect(),
        ResidualModel::Scalar => vec![acc.iter().sum::<f64>() / (n * f) as f64; blocks],
    }
}

fn check_tau(tau2: &[f64], iteration: usize) -> Result<()> {
    if tau2.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::Numerical {
            iteration,
            reason: "effective noise variance collapsed".into(),
        });
    }
    Ok(())
}

/// Row denoiser for the TUMA model, one LSFC profile per zone.
struct ZoneDenoiser<'a> {
    /// per zone, per block: `N P gamma_{u,b}`
    zone_var: Vec<Vec<f64>>,
    per_zone: usize,
    antennas: usize,
    prior: &'a [f64],
    tables: Vec<BlockTables>,
    scratch: RowScratch,
    energy: Vec<f64>,
}

impl RowDenoiser for ZoneDenoiser<'_> {
    fn prepare(&mut self, tau2: &[f64]) {
        self.tables = self
            .zone_var
            .iter()
            .map(|v| BlockTables::new(v, tau2, self.antennas, self.prior))
            .collect();
    }

    fn denoise(&mut self, row: usize, r_re: &[f64], r_im: &[f64], x_re: &mut [f64], x_im: &mut [f64], div: &mut [f64]) -> u32 {
        let t = &self.tables[row / self.per_zone];
        let a = self.antennas;
        for (b, e) in self.energy.iter_mut().enumerate() {
            let s = b * a..(b + 1) * a;
            *e = norm_sqr(&r_re[s.clone()], &r_im[s]);
        }
        t.posterior(&self.energy, &mut self.scratch);
        t.shrinkage(&self.energy, &mut self.scratch);
        for f in 0..r_re.len() {
            let g = self.scratch.gain[f / a];
            x_re[f] = g * r_re[f];
            x_im[f] = g * r_im[f];
        }
        div.copy_from_slice(&self.scratch.div);
        BlockTables::map(&self.scratch.post)
    }
}

/// Decoded multiplicities and the derived type for one subround.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeEstimate {
    /// `U x M` multiplicities.
    pub per_zone: Vec<Vec<u32>>,
    /// Multiplicities summed over zones (length M).
    pub global: Vec<u32>,
    /// Normalized type; all zeros when nothing was detected.
    pub types: Vec<f64>,
    /// `||k||_1`.
    pub count: usize,
}

impl TypeEstimate {
    /// Builds the estimate from zone-major multiplicities.
    pub fn from_multiplicities(k: &[u32], zones: usize, per_zone: usize) -> Self {
        let per_zone_k: Vec<Vec<u32>> = k.chunks(per_zone).take(zones).map(|c| c.to_vec()).collect();
        let mut global = vec![0u32; per_zone];
        for z in &per_zone_k {
            for (g, v) in global.iter_mut().zip(z) {
                *g += v;
            }
        }
        let count: usize = global.iter().map(|&v| v as usize).sum();
        let types = if count > 0 {
            global.iter().map(|&v| v as f64 / count as f64).collect()
        } else {
            vec![0.0; per_zone]
        };
        Self {
            per_zone: per_zone_k,
            global,
            types,
            count,
        }
    }
}

/// Decoder output with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub estimate: TypeEstimate,
    pub iterations: usize,
    /// Final effective noise variance (mean over blocks, in rescaled units).
    pub tau2: f64,
}

/// Runs the TUMA decoder on one received block. `zone_lsfc[u][b]` is the
/// centroid LSFC of zone `u` towards AP `b`.
pub fn amp_decode(
    signal: &ReceivedSignal,
    codebook: &CommCodebook,
    zone_lsfc: &[Vec<f64>],
    antennas: usize,
    prior: &[f64],
    cfg: &DecoderConfig,
) -> Result<Decoded> {
    let y = &signal.y;
    if y.rows != codebook.n {
        return Err(Error::dim("received blocklength", codebook.n, y.rows));
    }
    if zone_lsfc.len() != codebook.zones {
        return Err(Error::dim("zone LSFC profiles", codebook.zones, zone_lsfc.len()));
    }
    let blocks = zone_lsfc.first().map_or(0, |z| z.len());
    if antennas == 0 || y.cols != blocks * antennas {
        return Err(Error::dim("receive antennas", blocks * antennas, y.cols));
    }
    if !y.is_finite() {
        return Err(Error::input("received signal is not finite"));
    }
    let scale = codebook.n as f64 * signal.power;
    let mut den = ZoneDenoiser {
        zone_var: zone_lsfc.iter().map(|z| z.iter().map(|g| g * scale).collect()).collect(),
        per_zone: codebook.per_zone,
        antennas,
        prior,
        tables: Vec::new(),
        scratch: RowScratch::new(prior.len(), blocks),
        energy: vec![0.0; blocks],
    };
    let out = run_amp(y, &codebook.re, &codebook.im, codebook.num_columns(), antennas, cfg, &mut den)?;
    Ok(Decoded {
        estimate: TypeEstimate::from_multiplicities(&out.map, codebook.zones, codebook.per_zone),
        iterations: out.iterations,
        tau2: out.tau2,
    })
}

/// Median of the per-subround counts, rounded half up. Zero for no subrounds.
pub fn estimate_round_participants(counts: &[usize]) -> usize {
    if counts.is_empty() {
        return 0;
    }
    let mut c = counts.to_vec();
    c.sort_unstable();
    let n = c.len();
    if n % 2 == 1 {
        c[n / 2]
    } else {
        (c[n / 2 - 1] + c[n / 2]).div_ceil(2)
    }
}

/// `0.5 * sum |a - b|`.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
