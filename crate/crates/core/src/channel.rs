//! D-MIMO deployment and the uplink channel.
//!
//! The coverage area is a `grid x grid` layout of square zones. Access points sit
//! on every gridline at half-square spacing, so each zone centroid is exactly half
//! a side away from the midpoints of its four edges. With a 3x3 grid of 100 m
//! squares this is 40 APs, and the nearest AP to every centroid is 50 m away.
//! Receive antennas are indexed AP-major: antenna `f` belongs to AP `f / A`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{axpy, CMat};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ChannelConfig {
    /// Blocklength N.
    pub blocklength: usize,
    /// Zones per side (U = grid^2).
    pub grid: usize,
    /// Zone side length in metres.
    pub square_side: f64,
    /// Antennas per AP (A).
    pub antennas_per_ap: usize,
    /// Path-loss exponent alpha.
    pub pathloss_exponent: f64,
    /// Path-loss reference distance d0 in metres.
    pub reference_distance: f64,
    /// Received SNR at the centroid-to-nearest-AP distance, in dB.
    pub snr_rx_db: f64,
    /// Average per-symbol transmit power P in watts.
    pub tx_power: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            blocklength: 50,
            grid: 3,
            square_side: 100.0,
            antennas_per_ap: 4,
            pathloss_exponent: 3.67,
            reference_distance: 13.57,
            snr_rx_db: 10.0,
            tx_power: 1e-3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocklength == 0 {
            return Err(Error::config("channel.blocklength", "must be at least 1"));
        }
        if self.grid == 0 {
            return Err(Error::config("channel.grid", "must be at least 1"));
        }
        if self.antennas_per_ap == 0 {
            return Err(Error::config("channel.antennas_per_ap", "must be at least 1"));
        }
        for (key, v) in [
            ("channel.square_side", self.square_side),
            ("channel.pathloss_exponent", self.pathloss_exponent),
            ("channel.reference_distance", self.reference_distance),
            ("channel.tx_power", self.tx_power),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.snr_rx_db.is_finite() {
            return Err(Error::config("channel.snr_rx_db", "must be finite"));
        }
        Ok(())
    }
}

pub type Position = (f64, f64);

fn distance(a: Position, b: Position) -> f64 {
    libm::hypot(a.0 - b.0, a.1 - b.1)
}

/// Large-scale fading coefficient `1 / (1 + (d / d0)^alpha)`.
pub fn lsfc_at_distance(d: f64, d0: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + libm::pow(d / d0, alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub grid: usize,
    pub square_side: f64,
    pub antennas_per_ap: usize,
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
    pub aps: Vec<Position>,
    pub centroids: Vec<Position>,
}

impl Geometry {
    pub fn build(cfg: &ChannelConfig) -> Self {
        let g = cfg.grid;
        let s = cfg.square_side;
        let h = s / 2.0;
        let mut aps = Vec::new();
        // row-major over the half-side lattice, keeping points on a gridline
        for iy in 0..=2 * g {
            for ix in 0..=2 * g {
                if iy % 2 == 0 || ix % 2 == 0 {
                    aps.push((ix as f64 * h, iy as f64 * h));
                }
            }
        }
        let centroids = (0..g * g)
            .map(|u| (((u % g) as f64 + 0.5) * s, ((u / g) as f64 + 0.5) * s))
            .collect();
        Self {
            grid: g,
            square_side: s,
            antennas_per_ap: cfg.antennas_per_ap,
            pathloss_exponent: cfg.pathloss_exponent,
            reference_distance: cfg.reference_distance,
            aps,
            centroids,
        }
    }

    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.aps.len() * self.antennas_per_ap
    }

    pub fn num_zones(&self) -> usize {
        self.centroids.len()
    }

    pub fn side_length(&self) -> f64 {
        self.grid as f64 * self.square_side
    }

    /// Zone index of a position; points outside the area map to the nearest edge zone.
    pub fn zone_of(&self, p: Position) -> usize {
        let cell = |v: f64| {
            let i = libm::floor(v / self.square_side);
            if i < 0.0 {
                0
            } else {
                (i as usize).min(self.grid - 1)
            }
        };
        cell(p.1) * self.grid + cell(p.0)
    }

    pub fn lsfc(&self, p: Position, ap: usize) -> f64 {
        lsfc_at_distance(distance(p, self.aps[ap]), self.reference_distance, self.pathloss_exponent)
    }

    /// LSFCs from `p` to every AP.
    pub fn lsfc_profile(&self, p: Position) -> Vec<f64> {
        (0..self.aps.len()).map(|b| self.lsfc(p, b)).collect()
    }

    /// LSFC profile of each zone centroid (`U x B`).
    pub fn zone_profiles(&self) -> Vec<Vec<f64>> {
        self.centroids.iter().map(|&c| self.lsfc_profile(c)).collect()
    }

    /// LSFC profile of each zone averaged over a uniform position in the zone,
    /// by the midpoint rule on a `resolution x resolution` grid.
    pub fn zone_average_profiles(&self, resolution: usize) -> Vec<Vec<f64>> {
        let r = resolution.max(1);
        let step = self.square_side / r as f64;
        let weight = 1.0 / (r * r) as f64;
        self.centroids
            .iter()
            .map(|&c| {
                let mut acc = vec![0.0; self.aps.len()];
                for i in 0..r {
                    for j in 0..r {
                        let p = (
                            c.0 - self.square_side / 2.0 + (i as f64 + 0.5) * step,
                            c.1 - self.square_side / 2.0 + (j as f64 + 0.5) * step,
                        );
                        for (b, a) in acc.iter_mut().enumerate() {
                            *a += weight * self.lsfc(p, b);
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Index of the AP nearest to a position (smallest index on ties).
    pub fn nearest_ap(&self, p: Position) -> usize {
        let mut best = (0, f64::INFINITY);
        for (b, &ap) in self.aps.iter().enumerate() {
            let d = distance(p, ap);
            if d < best.1 - 1e-9 {
                best = (b, d);
            }
        }
        best.0
    }

    /// Largest distance from any zone centroid to its nearest AP (varsigma).
    pub fn centroid_ap_distance(&self) -> f64 {
        self.centroids
            .iter()
            .map(|&c| distance(c, self.aps[self.nearest_ap(c)]))
            .fold(0.0, f64::max)
    }

    /// Uniform i.i.d. client positions over the whole area.
    pub fn place_clients<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<Position> {
        let side = self.side_length();
        (0..k)
            .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
            .collect()
    }
}

/// Noise variance that yields `snr_rx_db` at the centroid-to-nearest-AP distance.
pub fn calibrate_noise(snr_rx_db: f64, tx_power: f64, geometry: &Geometry) -> f64 {
    let snr = libm::pow(10.0, snr_rx_db / 10.0);
    let path = 1.0
        + libm::pow(
            geometry.centroid_ap_distance() / geometry.reference_distance,
            geometry.pathloss_exponent,
        );
    tx_power / (snr * path)
}

/// Common codebook `C` (N x U*M) with unit-norm columns, stored column-contiguous.
/// Zone `u` owns columns `u*M .. (u+1)*M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommCodebook {
    pub n: usize,
    pub zones: usize,
    pub per_zone: usize,
    /// Column `j` occupies `[j*n, (j+1)*n)`.
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl CommCodebook {
    /// Entries i.i.d. CN(0, 1/N), then each column scaled to unit norm.
    pub fn generate<R: Rng + ?Sized>(n: usize, zones: usize, per_zone: usize, rng: &mut R) -> Self {
        let cols = zones * per_zone;
        let sd = libm::sqrt(0.5 / n as f64);
        let mut re = Vec::with_capacity(n * cols);
        let mut im = Vec::with_capacity(n * cols);
        for _ in 0..cols {
            let start = re.len();
            for _ in 0..n {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                re.push(sd * a);
                im.push(sd * b);
            }
            let norm = libm::sqrt(crate::linalg::norm_sqr(&re[start..], &im[start..]));
            for v in re[start..].iter_mut().chain(im[start..].iter_mut()) {
                *v /= norm;
            }
        }
        Self {
            n,
            zones,
            per_zone,
            re,
            im,
        }
    }

    pub fn num_columns(&self) -> usize {
        self.zones * self.per_zone
    }

    pub fn column_index(&self, zone: usize, m: usize) -> usize {
        zone * self.per_zone + m
    }

    pub fn column(&self, j: usize) -> (&[f64], &[f64]) {
        let s = j * self.n..(j + 1) * self.n;
        (&self.re[s.clone()], &self.im[s])
    }

    pub fn column_norm_sqr(&self, j: usize) -> f64 {
        let (r, i) = self.column(j);
        crate::linalg::norm_sqr(r, i)
    }

    /// Codebook restricted to one zone's columns.
    pub fn zone(&self, u: usize) -> CommCodebook {
        let s = u * self.per_zone * self.n..(u + 1) * self.per_zone * self.n;
        CommCodebook {
            n: self.n,
            zones: 1,
            per_zone: self.per_zone,
            re: self.re[s.clone()].to_vec(),
            im: self.im[s].to_vec(),
        }
    }
}

/// Draws one circularly-symmetric sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let sd = libm::sqrt(var / 2.0);
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Complex64::new(sd * a, sd * b)
}

/// Rayleigh channel vectors (length F, AP-major), one per position.
pub fn draw_channels<R: Rng + ?Sized>(positions: &[Position], geometry: &Geometry, rng: &mut R) -> Vec<Vec<Complex64>> {
    positions
        .iter()
        .map(|&p| {
            let mut h = Vec::with_capacity(geometry.num_antennas());
            for b in 0..geometry.num_aps() {
                let g = geometry.lsfc(p, b);
                for _ in 0..geometry.antennas_per_ap {
                    h.push(complex_normal(g, rng));
                }
            }
            h
        })
        .collect()
}

/// Who sends what in one subround: one `(zone, codeword index)` per participant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubroundTransmission {
    pub sends: Vec<(usize, usize)>,
}

impl SubroundTransmission {
    /// Zone-major multiplicities `k_{u,m}` (length U*M).
    pub fn multiplicities(&self, zones: usize, per_zone: usize) -> Vec<u32> {
        let mut k = vec![0u32; zones * per_zone];
        for &(u, m) in &self.sends {
            k[u * per_zone + m] += 1;
        }
        k
    }
}

/// Superimposed channel of every active column: `x_{u,m}` = sum of the channels
/// of the zone-`u` clients sending `m`.
pub fn effective_channels(
    tx: &SubroundTransmission,
    channels: &[Vec<Complex64>],
    per_zone: usize,
) -> BTreeMap<usize, Vec<Complex64>> {
    let mut x: BTreeMap<usize, Vec<Complex64>> = BTreeMap::new();
    for (&(u, m), h) in tx.sends.iter().zip(channels) {
        let row = x.entry(u * per_zone + m).or_insert_with(|| vec![Complex64::new(0.0, 0.0); h.len()]);
        for (a, b) in row.iter_mut().zip(h) {
            *a += b;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// N x F
    pub y: CMat,
    pub noise_var: f64,
    pub power: f64,
}

/// `Y = sqrt(N P) sum_u C_u X_u + W` for the given channel realizations.
pub fn received_from_channels<R: Rng + ?Sized>(
    tx: &SubroundTransmission,
    channels: &[Vec<Complex64>],
    codebook: &CommCodebook,
    power: f64,
    noise_var: f64,
    antennas: usize,
    rng: &mut R,
) -> ReceivedSignal {
    let n = codebook.n;
    let mut y = CMat::zeros(n, antennas);
    let gain = libm::sqrt(n as f64 * power);
    for (j, x) in effective_channels(tx, channels, codebook.per_zone) {
        let x_re: Vec<f64> = x.iter().map(|v| v.re * gain).collect();
        let x_im: Vec<f64> = x.iter().map(|v| v.im * gain).collect();
        let (c_re, c_im) = codebook.column(j);
        for i in 0..n {
            let (yr, yi) = y.row_mut(i);
            axpy(Complex64::new(c_re[i], c_im[i]), &x_re, &x_im, yr, yi);
        }
    }
    if noise_var > 0.0 {
        for i in 0..n * antennas {
            let w = complex_normal(noise_var, rng);
            y.re[i] += w.re;
            y.im[i] += w.im;
        }
    }
    ReceivedSignal { y, noise_var, power }
}

/// Draws fresh channels for the participants and synthesizes the received block.
/// `positions[i]` belongs to `tx.sends[i]`.
pub fn synthesize_received<R: Rng + ?Sized>(
    tx: &SubroundTransmission,
    positions: &[Position],
    geometry: &Geometry,
    codebook: &CommCodebook,
    power: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    if positions.len() != tx.sends.len() {
        return Err(Error::dim("participant positions", tx.sends.len(), positions.len()));
    }
    for &(u, m) in &tx.sends {
        if u >= codebook.zones || m >= codebook.per_zone {
            return Err(Error::input("transmission references a codeword outside the codebook"));
        }
    }
    let channels = draw_channels(positions, geometry, rng);
    Ok(received_from_channels(
        tx,
        &channels,
        codebook,
        power,
        noise_var,
        geometry.num_antennas(),
        rng,
    ))
}
