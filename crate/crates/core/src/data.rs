//! In-memory datasets, splitting and Dirichlet non-IID partitioning.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("feature dimension must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::dim("feature rows", labels.len(), features.len() / dim));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn view(&self) -> View<'_> {
        View {
            data: self,
            indices: None,
        }
    }

    pub fn select<'a>(&'a self, indices: &'a [usize]) -> View<'a> {
        View {
            data: self,
            indices: Some(indices),
        }
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (features, labels) = self.select(indices).gather_all();
        Dataset {
            dim: self.dim,
            features,
            labels,
        }
    }

    /// Largest label plus one (0 for an empty dataset).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }
}

/// Borrowed view of a dataset, optionally restricted to a list of rows.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    data: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> View<'a> {
    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), |i| i.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    fn source(&self, i: usize) -> usize {
        self.indices.map_or(i, |idx| idx[i])
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        self.data.row(self.source(i))
    }

    pub fn label(&self, i: usize) -> u8 {
        self.data.labels[self.source(i)]
    }

    /// Stacks the given view-relative rows into a contiguous batch.
    pub fn gather(&self, rows: &[usize]) -> (Vec<f64>, Vec<u8>) {
        let mut x = Vec::with_capacity(rows.len() * self.dim());
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.label(r));
        }
        (x, y)
    }

    fn gather_all(&self) -> (Vec<f64>, Vec<u8>) {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.gather(&rows)
    }
}

/// Train / validation / test split of one dataset, as row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the rows and splits them by `ratios`. Validation and test sizes are
/// floored; the remainder goes to training.
pub fn split<R: Rng + ?Sized>(n: usize, ratios: (f64, f64, f64), rng: &mut R) -> Result<Split> {
    if n == 0 {
        return Err(Error::input("cannot split an empty dataset"));
    }
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) {
        return Err(Error::input("split ratios must all be positive"));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::input("split ratios must sum to 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = libm::floor(n as f64 * va) as usize;
    let n_test = libm::floor(n as f64 * te) as usize;
    let test = order.split_off(n - n_test);
    let val = order.split_off(n - n_test - n_val);
    Ok(Split {
        train: order,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub alpha: f64,
}

/// Per-class Dirichlet allocation over clients.
///
/// For every class a weight vector `p ~ Dir(alpha * 1_K)` is drawn and each
/// sample of that class goes to client `k` with probability `p[k]`. Returns one
/// list of dataset row indices per client; shards may be empty.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    labels: &[u8],
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let k = spec.num_clients;
    if k == 0 {
        return Err(Error::config("data.num_clients", "must be at least 1"));
    }
    if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
        return Err(Error::config("data.dirichlet_alpha", "must be positive and finite"));
    }
    let mut shards = vec![Vec::new(); k];
    if k == 1 {
        shards[0] = (0..labels.len()).collect();
        return Ok(shards);
    }
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let gamma = Gamma::new(spec.alpha, 1.0).map_err(|_| Error::config("data.dirichlet_alpha", "invalid"))?;
    for members in &by_class {
        if members.is_empty() {
            continue;
        }
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        let mut cdf = Vec::with_capacity(k);
        let mut acc = 0.0;
        for v in &g {
            acc += v / total;
            cdf.push(acc);
        }
        for &i in members {
            let u: f64 = rng.random::<f64>() * acc;
            let client = cdf.partition_point(|&c| c <= u).min(k - 1);
            shards[client].push(i);
        }
    }
    Ok(shards)
}

/// Isotropic unit-variance Gaussian blobs, one per class, with class means at
/// pairwise distance at least `separation`. Labels are assigned round-robin.
pub fn synthetic_dataset<R: Rng + ?Sized>(
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 || classes == 0 || dim == 0 {
        return Err(Error::input("synthetic dataset needs n, classes and dim >= 1"));
    }
    if classes > 256 {
        return Err(Error::input("at most 256 classes are supported"));
    }
    let means = blob_means(classes, dim, separation, rng);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c as u8);
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            features.push(means[c * dim + j] + z);
        }
    }
    Dataset::new(dim, features, labels)
}

fn blob_means<R: Rng + ?Sized>(classes: usize, dim: usize, separation: f64, rng: &mut R) -> Vec<f64> {
    let mut means = vec![0.0; classes * dim];
    if classes <= dim {
        // scaled basis vectors: every pair is exactly `separation` apart
        let s = separation / core::f64::consts::SQRT_2;
        for c in 0..classes {
            means[c * dim + c] = s;
        }
        return means;
    }
    let mut radius = separation.max(1.0);
    loop {
        for _ in 0..200 {
            for v in means.iter_mut() {
                *v = radius * (2.0 * rng.random::<f64>() - 1.0);
            }
            let ok = (0..classes).all(|a| {
                (a + 1..classes).all(|b| {
                    let d2: f64 = (0..dim)
                        .map(|j| {
                            let d = means[a * dim + j] - means[b * dim + j];
                            d * d
                        })
                        .sum();
                    d2 >= separation * separation
                })
            });
            if ok {
                return means;
            }
        }
        radius *= 1.5;
    }
}
