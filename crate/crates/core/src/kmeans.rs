//! K-means++ seeding followed by Lloyd iterations.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Centroid movement below which Lloyd iterations stop.
pub const CONVERGENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    /// Total squared distortion after each assignment step.
    pub distortion: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (smallest index on ties) and its squared distance.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

/// Total squared distortion of `samples` under `centroids`.
pub fn distortion(samples: &[f64], centroids: &[f64], dim: usize) -> f64 {
    samples.chunks_exact(dim).map(|s| nearest(s, centroids, dim).1).sum()
}

/// Fits `k` centroids to the `dim`-dimensional rows of `samples`.
pub fn kmeanspp_fit<R: Rng + ?Sized>(
    samples: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeansFit> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::input("sample buffer is not a whole number of rows"));
    }
    let n = samples.len() / dim;
    if k == 0 || n == 0 {
        return Err(Error::config("quant", "k-means needs at least one sample and one centroid"));
    }
    let row = |i: usize| &samples[i * dim..(i + 1) * dim];
    if n <= k {
        // every sample is its own centroid; spare slots repeat the samples and
        // are never chosen by `nearest`, which breaks ties to the lower index
        let centroids = (0..k).flat_map(|m| row(m % n).iter().copied()).collect();
        return Ok(KMeansFit {
            centroids,
            distortion: vec![0.0],
            iterations: 0,
        });
    }

    // seeding
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > u && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = &centroids[centroids.len() - dim..];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), c));
        }
    }

    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut total = 0.0;
        for i in 0..n {
            let (a, d) = nearest(row(i), &centroids, dim);
            assign[i] = a;
            dist[i] = d;
            total += d;
        }
        history.push(total);
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut moved: f64 = 0.0;
        let mut taken = vec![false; n];
        for m in 0..k {
            let new: Vec<f64> = if counts[m] > 0 {
                sums[m * dim..(m + 1) * dim].iter().map(|s| s / counts[m] as f64).collect()
            } else {
                // re-seed at the sample currently farthest from its centroid
                let mut far = None;
                for i in 0..n {
                    if !taken[i] && far.is_none_or(|f: usize| dist[i] > dist[f]) {
                        far = Some(i);
                    }
                }
                let far = far.unwrap_or(0);
                taken[far] = true;
                dist[far] = 0.0;
                row(far).to_vec()
            };
            let old = &mut centroids[m * dim..(m + 1) * dim];
            moved = moved.max(libm::sqrt(sq_dist(old, &new)));
            old.copy_from_slice(&new);
        }
        if moved < CONVERGENCE_TOL {
            let final_total = distortion(samples, &centroids, dim);
            history.push(final_total);
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        distortion: history,
        iterations,
    })
}
