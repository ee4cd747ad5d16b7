//! MD-AirComp baseline on the D-MIMO uplink.
//!
//! Every zone has one reference antenna, the first antenna of the AP nearest to
//! its centroid. A client inverts its channel to its own zone's reference antenna,
//! so that antenna sees `p_norm * C_u k_u` plus leakage from other zones and noise.
//! The receiver keeps only the reference antennas and decodes each zone with
//! scalar AMP and a known deterministic gain.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{complex_normal, CommCodebook, Geometry, Position, SubroundTransmission};
use crate::decoder::{run_amp, Decoded, DecoderConfig, RowDenoiser, TypeEstimate};
use crate::linalg::CMat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MdAirCompConfig {
    /// Clients whose reference-antenna gain magnitude is below this skip the subround.
    pub fade_threshold: f64,
}

impl Default for MdAirCompConfig {
    fn default() -> Self {
        Self { fade_threshold: 1e-6 }
    }
}

impl MdAirCompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fade_threshold >= 0.0 && self.fade_threshold.is_finite()) {
            return Err(Error::config("mdaircomp.fade_threshold", "must be non-negative"));
        }
        Ok(())
    }
}

/// Reference antenna index of every zone.
pub fn reference_antennas(geometry: &Geometry) -> Vec<usize> {
    geometry
        .centroids
        .iter()
        .map(|&c| geometry.nearest_ap(c) * geometry.antennas_per_ap)
        .collect()
}

/// Transmit amplitude that puts the expected per-zone received SNR at the
/// reference antenna at `snr_rx_db`, assuming `k_tar / zones` participants per zone.
pub fn power_normalization(snr_rx_db: f64, noise_var: f64, n: usize, zones: usize, k_tar: usize) -> f64 {
    let snr = libm::pow(10.0, snr_rx_db / 10.0);
    libm::sqrt(snr * noise_var * n as f64 * zones as f64 / k_tar as f64)
}

/// Pre-equalized transmit symbol, or `None` when the channel is in a deep fade.
pub fn preequalize(symbol: Complex64, h_ref: Complex64, p_norm: f64, threshold: f64) -> Option<Complex64> {
    if h_ref.norm() < threshold || h_ref.norm() == 0.0 {
        None
    } else {
        Some(symbol * p_norm / h_ref)
    }
}

/// Channel of every client towards every zone's reference antenna (`clients x U`).
pub fn draw_reference_channels<R: Rng + ?Sized>(
    positions: &[Position],
    geometry: &Geometry,
    refs: &[usize],
    rng: &mut R,
) -> Vec<Vec<Complex64>> {
    positions
        .iter()
        .map(|&p| {
            refs.iter()
                .map(|&f| complex_normal(geometry.lsfc(p, f / geometry.antennas_per_ap), rng))
                .collect()
        })
        .collect()
}

/// Reference-antenna observations of one subround.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    /// One `N x 1` observation per zone.
    pub y: Vec<CMat>,
    /// Whether each participant actually transmitted.
    pub transmitted: Vec<bool>,
    pub p_norm: f64,
}

impl ReferenceSignal {
    pub fn skipped(&self) -> usize {
        self.transmitted.iter().filter(|t| !**t).count()
    }
}

/// Builds the reference-antenna observations from given channels.
/// `tx.sends[i]` belongs to `h_ref[i]`.
pub fn received_at_references<R: Rng + ?Sized>(
    tx: &SubroundTransmission,
    h_ref: &[Vec<Complex64>],
    codebook: &CommCodebook,
    p_norm: f64,
    noise_var: f64,
    threshold: f64,
    rng: &mut R,
) -> ReferenceSignal {
    let n = codebook.n;
    let zones = codebook.zones;
    let mut y: Vec<CMat> = (0..zones).map(|_| CMat::zeros(n, 1)).collect();
    let mut transmitted = Vec::with_capacity(tx.sends.len());
    for (&(u, m), h) in tx.sends.iter().zip(h_ref) {
        let Some(gain) = preequalize(Complex64::new(1.0, 0.0), h[u], p_norm, threshold) else {
            transmitted.push(false);
            continue;
        };
        transmitted.push(true);
        let (c_re, c_im) = codebook.column(codebook.column_index(u, m));
        for (v, yv) in y.iter_mut().enumerate() {
            let g = if v == u { Complex64::new(p_norm, 0.0) } else { gain * h[v] };
            for i in 0..n {
                let s = g * Complex64::new(c_re[i], c_im[i]);
                yv.re[i] += s.re;
                yv.im[i] += s.im;
            }
        }
    }
    if noise_var > 0.0 {
        for yv in &mut y {
            for i in 0..n {
                let w = complex_normal(noise_var, rng);
                yv.re[i] += w.re;
                yv.im[i] += w.im;
            }
        }
    }
    ReferenceSignal { y, transmitted, p_norm }
}

/// Draws reference channels and builds the observations.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_reference<R: Rng + ?Sized>(
    tx: &SubroundTransmission,
    positions: &[Position],
    geometry: &Geometry,
    codebook: &CommCodebook,
    p_norm: f64,
    noise_var: f64,
    threshold: f64,
    rng: &mut R,
) -> Result<ReferenceSignal> {
    if positions.len() != tx.sends.len() {
        return Err(Error::dim("participant positions", tx.sends.len(), positions.len()));
    }
    let refs = reference_antennas(geometry);
    let h = draw_reference_channels(positions, geometry, &refs, rng);
    Ok(received_at_references(tx, &h, codebook, p_norm, noise_var, threshold, rng))
}

/// Posterior over `k` for `r = p k + CN(0, tau2)`.
struct GainDenoiser<'a> {
    gain: f64,
    prior: &'a [f64],
    log_prior: Vec<f64>,
    tau2: f64,
    post: Vec<f64>,
}

impl RowDenoiser for GainDenoiser<'_> {
    fn prepare(&mut self, tau2: &[f64]) {
        self.tau2 = tau2[0];
    }

    fn denoise(&mut self, _row: usize, r_re: &[f64], r_im: &[f64], x_re: &mut [f64], x_im: &mut [f64], div: &mut [f64]) -> u32 {
        let (re, im) = (r_re[0], r_im[0]);
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.prior.len() {
            let d = re - self.gain * k as f64;
            let l = self.log_prior[k] - (d * d + im * im) / self.tau2;
            self.post[k] = l;
            max = max.max(l);
        }
        let mut total = 0.0;
        for p in &mut self.post {
            *p = libm::exp(*p - max);
            total += *p;
        }
        let (mut mean, mut second) = (0.0, 0.0);
        let mut best = 0;
        for k in 0..self.post.len() {
            self.post[k] /= total;
            mean += self.post[k] * k as f64;
            second += self.post[k] * (k * k) as f64;
            if self.post[k] > self.post[best] {
                best = k;
            }
        }
        x_re[0] = self.gain * mean;
        x_im[0] = 0.0;
        div[0] = self.gain * self.gain * (second - mean * mean).max(0.0) / self.tau2;
        best as u32
    }
}

/// Decodes every zone from its reference-antenna observation.
pub fn mdaircomp_decode(signal: &ReferenceSignal, codebook: &CommCodebook, prior: &[f64], cfg: &DecoderConfig) -> Result<Decoded> {
    if signal.y.len() != codebook.zones {
        return Err(Error::dim("reference observations", codebook.zones, signal.y.len()));
    }
    let m = codebook.per_zone;
    let mut k = vec![0u32; codebook.num_columns()];
    let mut iterations = 0;
    let mut tau2 = 0.0;
    for (u, y) in signal.y.iter().enumerate() {
        if y.rows != codebook.n || y.cols != 1 {
            return Err(Error::dim("reference observation length", codebook.n, y.rows));
        }
        if !y.is_finite() {
            return Err(Error::input("reference observation is not finite"));
        }
        let zone = codebook.zone(u);
        let mut den = GainDenoiser {
            gain: signal.p_norm,
            prior,
            log_prior: prior.iter().map(|p| libm::log(*p)).collect(),
            tau2: 1.0,
            post: vec![0.0; prior.len()],
        };
        let out = run_amp(y, &zone.re, &zone.im, m, 1, cfg, &mut den)?;
        k[u * m..(u + 1) * m].copy_from_slice(&out.map);
        iterations = iterations.max(out.iterations);
        tau2 += out.tau2 / codebook.zones as f64;
    }
    Ok(Decoded {
        estimate: TypeEstimate::from_multiplicities(&k, codebook.zones, m),
        iterations,
        tau2,
    })
}
