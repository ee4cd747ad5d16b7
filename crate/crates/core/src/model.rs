//! Multilayer perceptron with ReLU hidden layers, one dropout layer after the
//! last hidden layer and a log-softmax output, trained with plain mini-batch SGD
//! on the negative log-likelihood.
//!
//! Parameters are stored flat. For every layer, in input-to-output order, the
//! weight matrix comes first (`out x in`, row-major) followed by the bias vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::View;
use crate::{Error, Result};

/// Shape of the network.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
}

impl Default for Architecture {
    /// 784-64-30-10 with dropout 0.5 (W = 52 500).
    fn default() -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![64, 30],
            output_dim: 10,
            dropout_rate: 0.5,
        }
    }
}

impl Architecture {
    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count W.
    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|&(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("model", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("model.dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Flat parameter vector `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self(vec![0.0; arch.num_params()])
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer, weights and biases alike.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(arch.num_params());
        for (fan_in, fan_out) in arch.layers() {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for _ in 0..fan_in * fan_out + fan_out {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Local training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Number of local steps E.
    pub epochs: usize,
    /// Mini-batch size V.
    pub batch_size: usize,
    /// Local learning rate.
    pub learning_rate: f64,
    /// Sweep the whole shard each epoch instead of taking one mini-batch step.
    #[cfg_attr(feature = "serde", serde(default))]
    pub full_epoch_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.001,
            full_epoch_mode: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Forward and backward passes of one architecture.
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: Architecture,
    layers: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    num_params: usize,
}

struct Tape {
    /// Post-activation outputs; `acts[0]` is the input batch.
    acts: Vec<Vec<f64>>,
    /// Dropout multipliers applied to the last hidden activation.
    mask: Option<Vec<f64>>,
    logprobs: Vec<f64>,
}

impl Mlp {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += i * o + o;
        }
        Ok(Self {
            arch,
            layers,
            offsets,
            num_params: off,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::config(
                "model",
                alloc::format!(
                    "parameter vector has length {}, architecture needs {}",
                    params.len(),
                    self.num_params
                ),
            ));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, w: &[f64], inputs: &[f64], batch: usize, mode: Mode, rng: &mut R) -> Tape {
        let n_layers = self.layers.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(inputs.to_vec());
        let mut mask = None;
        let mut logits = Vec::new();
        for (l, (&(fan_in, fan_out), &off)) in self.layers.iter().zip(&self.offsets).enumerate() {
            let weights = &w[off..off + fan_in * fan_out];
            let bias = &w[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let input = &acts[l];
            let mut out = vec![0.0; batch * fan_out];
            for b in 0..batch {
                let x = &input[b * fan_in..(b + 1) * fan_in];
                let row = &mut out[b * fan_out..(b + 1) * fan_out];
                for (o, y) in row.iter_mut().enumerate() {
                    let wr = &weights[o * fan_in..(o + 1) * fan_in];
                    *y = bias[o] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if l + 1 == n_layers {
                logits = out;
                break;
            }
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let last_hidden = l + 2 == n_layers;
            let rate = self.arch.dropout_rate;
            if last_hidden && mode == Mode::Train && rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                let m: Vec<f64> = (0..out.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                for (v, k) in out.iter_mut().zip(&m) {
                    *v *= k;
                }
                mask = Some(m);
            }
            acts.push(out);
        }
        let classes = self.arch.output_dim;
        for row in logits.chunks_mut(classes) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tape {
            acts,
            mask,
            logprobs: logits,
        }
    }

    fn batch_of(&self, inputs: &[f64]) -> Result<usize> {
        let d = self.arch.input_dim;
        if !inputs.len().is_multiple_of(d) {
            return Err(Error::dim("input row width", d, inputs.len() % d));
        }
        Ok(inputs.len() / d)
    }

    /// Log-probabilities (`batch x output_dim`, row-major) for a row-major input batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        inputs: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let batch = self.batch_of(inputs)?;
        Ok(self.run(&params.0, inputs, batch, mode, rng).logprobs)
    }

    /// Mean NLL over the batch and its gradient with respect to the parameters.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        inputs: &[f64],
        labels: &[u8],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        let batch = self.batch_of(inputs)?;
        if labels.len() != batch {
            return Err(Error::dim("label count", batch, labels.len()));
        }
        let w = &params.0;
        let tape = self.run(w, inputs, batch, mode, rng);
        let loss = nll_loss(&tape.logprobs, self.arch.output_dim, labels)?;

        let classes = self.arch.output_dim;
        let scale = 1.0 / batch as f64;
        // d loss / d logits = (softmax - onehot) / batch
        let mut delta: Vec<f64> = tape.logprobs.iter().map(|lp| libm::exp(*lp) * scale).collect();
        for (b, &y) in labels.iter().enumerate() {
            delta[b * classes + y as usize] -= scale;
        }

        let mut grad = vec![0.0; self.num_params];
        for l in (0..self.layers.len()).rev() {
            let (fan_in, fan_out) = self.layers[l];
            let off = self.offsets[l];
            let input = &tape.acts[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for b in 0..batch {
                    let x = &input[b * fan_in..(b + 1) * fan_in];
                    for o in 0..fan_out {
                        let d = delta[b * fan_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &w[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; batch * fan_in];
            for b in 0..batch {
                let row = &mut prev[b * fan_in..(b + 1) * fan_in];
                for o in 0..fan_out {
                    let d = delta[b * fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in row.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
            }
            // `input` is the (possibly dropped-out) ReLU output feeding layer l.
            if l + 1 == self.layers.len() {
                if let Some(mask) = &tape.mask {
                    for (p, m) in prev.iter_mut().zip(mask) {
                        *p *= m;
                    }
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok((loss, grad))
    }

    /// Runs local SGD from `params` on `shard` and returns the trained parameters.
    ///
    /// Each of the `epochs` steps draws one mini-batch of `batch_size` samples
    /// (without replacement, or with replacement when the shard is smaller). With
    /// `full_epoch_mode` every epoch sweeps the shuffled shard instead.
    pub fn local_train<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        shard: View<'_>,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<ModelParams> {
        self.check_params(params)?;
        if shard.is_empty() {
            return Err(Error::input("local training on an empty shard"));
        }
        if shard.dim() != self.arch.input_dim {
            return Err(Error::dim("shard feature width", self.arch.input_dim, shard.dim()));
        }
        let mut w = params.clone();
        let n = shard.len();
        let v = cfg.batch_size;
        let step = |w: &mut ModelParams, batch: &[usize], rng: &mut R| -> Result<()> {
            let (x, y) = shard.gather(batch);
            let (_, g) = self.loss_and_grad(w, &x, &y, Mode::Train, rng)?;
            for (wi, gi) in w.0.iter_mut().zip(&g) {
                *wi -= cfg.learning_rate * gi;
            }
            Ok(())
        };
        for _ in 0..cfg.epochs {
            if cfg.full_epoch_mode {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                for chunk in order.chunks(v) {
                    step(&mut w, chunk, rng)?;
                }
            } else {
                let batch: Vec<usize> = if n >= v {
                    index::sample(rng, n, v).into_vec()
                } else {
                    (0..v).map(|_| rng.random_range(0..n)).collect()
                };
                step(&mut w, &batch, rng)?;
            }
        }
        Ok(w)
    }

    /// Mean NLL and argmax accuracy with dropout disabled.
    pub fn evaluate(&self, params: &ModelParams, data: View<'_>) -> Result<(f64, f64)> {
        self.check_params(params)?;
        if data.is_empty() {
            return Err(Error::input("evaluation on an empty dataset"));
        }
        let classes = self.arch.output_dim;
        let mut loss = 0.0;
        let mut correct = 0usize;
        let all: Vec<usize> = (0..data.len()).collect();
        // dropout is off in eval mode, so the generator is never consumed
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        for chunk in all.chunks(512) {
            let (x, y) = data.gather(chunk);
            let lp = self.run(&params.0, &x, chunk.len(), Mode::Eval, &mut unused).logprobs;
            for (row, &label) in lp.chunks(classes).zip(&y) {
                let label = label as usize;
                if label >= classes {
                    return Err(Error::input(alloc::format!("label {label} out of range")));
                }
                loss -= row[label];
                let mut best = 0;
                for (c, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = c;
                    }
                }
                if best == label {
                    correct += 1;
                }
            }
        }
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Mean over rows of `-logprobs[row, label]`.
pub fn nll_loss(logprobs: &[f64], classes: usize, labels: &[u8]) -> Result<f64> {
    if logprobs.len() != labels.len() * classes {
        return Err(Error::dim("logprob rows", labels.len(), logprobs.len() / classes.max(1)));
    }
    if labels.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let mut total = 0.0;
    for (row, &y) in logprobs.chunks(classes).zip(labels) {
        let y = y as usize;
        if y >= classes {
            return Err(Error::input(alloc::format!("label {y} out of range [0, {classes})")));
        }
        total -= row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Local model update `new - old`.
pub fn compute_update(new: &ModelParams, old: &ModelParams) -> Result<Vec<f64>> {
    if new.len() != old.len() {
        return Err(Error::dim("update length", old.len(), new.len()));
    }
    Ok(new.0.iter().zip(&old.0).map(|(a, b)| a - b).collect())
}
