//! Vector quantization of model updates with error feedback, and the server-side
//! codebook refresh.
//!
//! An update of length W is split into `D = ceil(W / Q)` subvectors of length Q
//! (the last one zero-padded). Each subvector is replaced by its nearest codeword;
//! the residual is carried to the next round so that nothing is lost over time.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::View;
use crate::kmeans::{self, kmeanspp_fit};
use crate::model::{compute_update, Mlp, ModelParams, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct QuantConfig {
    /// Bits per subvector J; the codebook has `2^J` codewords.
    pub bits: u32,
    /// Subvector length Q.
    pub dim: usize,
    /// Lloyd iteration budget per refresh.
    pub kmeans_iters: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 7,
            dim: 30,
            kmeans_iters: 25,
        }
    }
}

impl QuantConfig {
    pub fn codewords(&self) -> usize {
        1usize << self.bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits > 20 {
            return Err(Error::config("quant.bits", "at most 20 bits are supported"));
        }
        if self.dim == 0 {
            return Err(Error::config("quant.dim", "must be at least 1"));
        }
        Ok(())
    }
}

/// Number of subrounds `ceil(W / Q)`.
pub fn num_subvectors(w: usize, q: usize) -> usize {
    w.div_ceil(q)
}

/// Codebook of `2^J` codewords of dimension Q.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantCodebook {
    dim: usize,
    codewords: Vec<f64>,
}

impl QuantCodebook {
    pub fn new(dim: usize, codewords: Vec<f64>) -> Result<Self> {
        if dim == 0 || codewords.is_empty() || !codewords.len().is_multiple_of(dim) {
            return Err(Error::input("codebook must hold at least one whole codeword"));
        }
        let m = codewords.len() / dim;
        if !m.is_power_of_two() {
            return Err(Error::input(alloc::format!("codebook size {m} is not a power of two")));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("codebook entries must be finite"));
        }
        Ok(Self { dim, codewords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.codewords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn bits(&self) -> u32 {
        self.len().trailing_zeros()
    }

    pub fn codeword(&self, m: usize) -> &[f64] {
        &self.codewords[m * self.dim..(m + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.codewords
    }

    /// Nearest codeword index (ties to the smallest index).
    pub fn encode(&self, sub: &[f64]) -> usize {
        kmeans::nearest(sub, &self.codewords, self.dim).0
    }

    /// Total squared distortion over the rows of `samples`.
    pub fn distortion(&self, samples: &[f64]) -> f64 {
        kmeans::distortion(samples, &self.codewords, self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantResult {
    /// One codeword index per subvector.
    pub indices: Vec<u32>,
    /// Concatenated codewords, truncated to W.
    pub quantized: Vec<f64>,
    /// Error carried into the next round.
    pub new_error: Vec<f64>,
}

/// Zero-pads `v` to a multiple of `q` and returns the flat `D x q` buffer.
pub fn to_subvectors(v: &[f64], q: usize) -> Vec<f64> {
    let mut padded = v.to_vec();
    padded.resize(num_subvectors(v.len(), q.max(1)) * q, 0.0);
    padded
}

/// Quantizes `delta + e_prev` against `cb`.
pub fn quantize_update(delta: &[f64], e_prev: &[f64], cb: &QuantCodebook) -> Result<QuantResult> {
    if delta.len() != e_prev.len() {
        return Err(Error::dim("accumulated error length", delta.len(), e_prev.len()));
    }
    let sbar: Vec<f64> = delta.iter().zip(e_prev).map(|(a, b)| a + b).collect();
    if sbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite entry in model update"));
    }
    let q = cb.dim();
    let padded = to_subvectors(&sbar, q);
    let indices: Vec<u32> = padded.chunks_exact(q).map(|s| cb.encode(s) as u32).collect();
    let quantized = dequantize(&indices, cb, sbar.len())?;
    let new_error = sbar.iter().zip(&quantized).map(|(s, q)| s - q).collect();
    Ok(QuantResult {
        indices,
        quantized,
        new_error,
    })
}

/// Concatenates the indexed codewords and truncates to `w` entries.
pub fn dequantize(indices: &[u32], cb: &QuantCodebook, w: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len() * cb.dim());
    for &m in indices {
        let m = m as usize;
        if m >= cb.len() {
            return Err(Error::input(alloc::format!(
                "codeword index {m} out of range for a codebook of {}",
                cb.len()
            )));
        }
        out.extend_from_slice(cb.codeword(m));
    }
    if out.len() < w {
        return Err(Error::dim("dequantized length", w, out.len()));
    }
    out.truncate(w);
    Ok(out)
}

/// Fits a `m`-word codebook to the length-`q` subvectors of `samples` (K-means++).
pub fn fit_codebook<R: Rng + ?Sized>(
    samples: &[f64],
    q: usize,
    m: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<QuantCodebook> {
    let fit = kmeanspp_fit(&to_subvectors(samples, q), q, m, max_iters, rng)?;
    QuantCodebook::new(q, fit.centroids)
}

/// Output of the per-round server codebook refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerRefresh {
    pub codebook: QuantCodebook,
    pub server_error: Vec<f64>,
    /// The server's error-compensated update `Delta_server + e_server`.
    pub samples: Vec<f64>,
}

/// Trains the global model once on the server's held-out data, adds the server's
/// accumulated error, fits a fresh codebook to the resulting subvectors and
/// advances the server error under that codebook.
#[allow(clippy::too_many_arguments)]
pub fn server_codebook_round<R: Rng + ?Sized>(
    mlp: &Mlp,
    server_params: &ModelParams,
    server_data: View<'_>,
    server_error: &[f64],
    cfg: &TrainConfig,
    quant: &QuantConfig,
    rng: &mut R,
) -> Result<ServerRefresh> {
    if server_data.is_empty() {
        return Err(Error::input("server dataset is empty"));
    }
    let trained = mlp.local_train(server_params, server_data, cfg, rng)?;
    let delta = compute_update(&trained, server_params)?;
    if delta.len() != server_error.len() {
        return Err(Error::dim("server error length", delta.len(), server_error.len()));
    }
    let samples: Vec<f64> = delta.iter().zip(server_error).map(|(a, b)| a + b).collect();
    let codebook = fit_codebook(&samples, quant.dim, quant.codewords(), quant.kmeans_iters, rng)?;
    let zero = vec![0.0; samples.len()];
    let q = quantize_update(&samples, &zero, &codebook)?;
    Ok(ServerRefresh {
        codebook,
        server_error: q.new_error,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cb(q: usize, m: usize, rng: &mut ChaCha8Rng) -> QuantCodebook {
        QuantCodebook::new(q, (0..q * m).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn gauss(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn paper_subround_count() {
        assert_eq!(num_subvectors(52_500, 30), 1750);
        assert_eq!(QuantConfig::default().codewords(), 128);
    }

    #[test]
    fn exactly_representable_update_has_zero_error() {
        let cb = QuantCodebook::new(2, vec![0.0, 0.0, 1.0, -1.0, 0.5, 0.5, 2.0, 3.0]).unwrap();
        let delta = vec![1.0, -1.0, 2.0, 3.0, 0.5];
        let r = quantize_update(&delta, &[0.0; 5], &cb).unwrap();
        // last subvector is (0.5, 0) padded: nearest is (0,0) or (0.5,0.5), both at 0.5^2; tie -> 0
        assert_eq!(r.indices, vec![1, 3, 0]);
        let delta = vec![1.0, -1.0, 2.0, 3.0, 0.0, 0.0];
        let r = quantize_update(&delta, &[0.0; 6], &cb).unwrap();
        assert_eq!(r.new_error, vec![0.0; 6]);
    }

    #[test]
    fn zero_update_maps_to_zero_codeword() {
        let cb = QuantCodebook::new(3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = quantize_update(&[0.0; 7], &[0.0; 7], &cb).unwrap();
        assert_eq!(r.indices, vec![1, 1, 1]);
        assert_eq!(r.quantized, vec![0.0; 7]);
        assert_eq!(r.new_error, vec![0.0; 7]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let cb = QuantCodebook::new(1, vec![0.0]).unwrap();
        assert!(matches!(
            quantize_update(&[f64::NAN], &[0.0], &cb),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dequantize_examples() {
        let cb = QuantCodebook::new(4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dequantize(&[0], &cb, 4).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dequantize(&[0, 0], &cb, 5).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 1.0]);
        assert!(dequantize(&[1], &cb, 4).is_err());
    }

    /// `q + e` recovers `s` up to the rounding of the subtraction that produced `e`.
    fn reassembles(q: f64, e: f64, s: f64) -> bool {
        (q + e - s).abs() <= 2.0 * f64::EPSILON * s.abs().max(q.abs())
    }

    #[test]
    fn telescoping_over_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = 47;
        let mut e = vec![0.0; w];
        let mut sum_s = vec![0.0; w];
        let mut sum_d = vec![0.0; w];
        for _ in 0..20 {
            let cb = random_cb(5, 8, &mut rng);
            let delta = gauss(w, &mut rng);
            let r = quantize_update(&delta, &e, &cb).unwrap();
            for i in 0..w {
                assert!(reassembles(r.quantized[i], r.new_error[i], delta[i] + e[i]));
                sum_s[i] += r.quantized[i];
                sum_d[i] += delta[i];
            }
            e = r.new_error;
        }
        for i in 0..w {
            assert!((sum_s[i] - (sum_d[i] - e[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn server_refresh_is_deterministic_and_improves_on_old_codebook() {
        let arch = Architecture {
            input_dim: 6,
            hidden_dims: vec![8, 5],
            output_dim: 3,
            dropout_rate: 0.5,
        };
        let mlp = Mlp::new(arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = crate::data::synthetic_dataset(120, 3, 6, 3.0, &mut rng).unwrap();
        let data = Dataset::new(6, data.features().to_vec(), data.labels().to_vec()).unwrap();
        let p = ModelParams::init(mlp.arch(), &mut rng);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.05,
            full_epoch_mode: false,
        };
        let quant = QuantConfig {
            bits: 3,
            dim: 4,
            kmeans_iters: 25,
        };
        let err0 = vec![0.0; p.len()];
        let a = server_codebook_round(&mlp, &p, data.view(), &err0, &cfg, &quant, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = server_codebook_round(&mlp, &p, data.view(), &err0, &cfg, &quant, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.codebook.len(), 8);

        let next = server_codebook_round(&mlp, &p, data.view(), &a.server_error, &cfg, &quant, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let subs = to_subvectors(&next.samples, 4);
        assert!(next.codebook.distortion(&subs) <= a.codebook.distortion(&subs));
    }

    proptest::proptest! {
        #[test]
        fn nearest_codeword_is_optimal(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = random_cb(3, 16, &mut rng);
            let sub = gauss(3, &mut rng);
            let m = cb.encode(&sub);
            let best = kmeans::sq_dist(cb.codeword(m), &sub);
            for j in 0..cb.len() {
                proptest::prop_assert!(best <= kmeans::sq_dist(cb.codeword(j), &sub));
            }
        }

        #[test]
        fn quantized_plus_error_is_input(seed in 0u64..1000, w in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = random_cb(4, 4, &mut rng);
            let d = gauss(w, &mut rng);
            let e = gauss(w, &mut rng);
            let r = quantize_update(&d, &e, &cb).unwrap();
            proptest::prop_assert_eq!(dequantize(&r.indices, &cb, w).unwrap(), r.quantized.clone());
            for i in 0..w {
                let s = d[i] + e[i];
                proptest::prop_assert_eq!(r.new_error[i], s - r.quantized[i]);
                proptest::prop_assert!(reassembles(r.quantized[i], r.new_error[i], s));
            }
        }
    }
}
