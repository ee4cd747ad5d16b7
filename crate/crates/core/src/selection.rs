//! Client participation: activation, candidate gating and the three selection
//! strategies (random, power-of-choice, loss-threshold self-selection).

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Hard bounds on the self-selection threshold.
pub const THETA_CLAMP: (f64, f64) = (0.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Strategy {
    Random,
    Poc,
    #[cfg_attr(feature = "serde", serde(rename = "self"))]
    SelfSelect,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Poc => "poc",
            Strategy::SelfSelect => "self",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "poc" => Ok(Strategy::Poc),
            "self" => Ok(Strategy::SelfSelect),
            other => Err(Error::config(
                "selection.strategy",
                alloc::format!("unknown strategy `{other}` (expected random, poc or self)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelectionConfig {
    pub strategy: Strategy,
    /// Total number of clients K.
    pub num_clients: usize,
    /// Activation probability lambda.
    pub activation_prob: f64,
    /// Target participants per round K_tar.
    pub target: usize,
    /// Mean candidate-pool size d.
    pub candidates: usize,
    /// Sigmoid steepness a.
    pub steepness: f64,
    /// Initial threshold theta(1).
    pub theta_init: f64,
    /// Threshold step size xi.
    pub step: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SelfSelect,
            num_clients: 1000,
            activation_prob: 0.8,
            target: 100,
            candidates: 200,
            steepness: 50.0,
            theta_init: 2.32,
            step: 0.004,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let lk = self.activation_prob * self.num_clients as f64;
        if self.num_clients == 0 {
            return Err(Error::config("selection.num_clients", "must be at least 1"));
        }
        if !(self.activation_prob > 0.0 && self.activation_prob <= 1.0) {
            return Err(Error::config("selection.activation_prob", "must lie in (0, 1]"));
        }
        if self.target == 0 || self.target > self.num_clients {
            return Err(Error::config("selection.target", "must lie in [1, num_clients]"));
        }
        if self.candidates as f64 > lk + 1e-9 {
            return Err(Error::config(
                "selection.candidates",
                "must not exceed activation_prob * num_clients",
            ));
        }
        if self.strategy == Strategy::Random && self.target as f64 > lk + 1e-9 {
            return Err(Error::config(
                "selection.target",
                "random selection needs target <= activation_prob * num_clients",
            ));
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            return Err(Error::config("selection.steepness", "must be positive"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("selection.step", "must be positive"));
        }
        if !self.theta_init.is_finite() {
            return Err(Error::config("selection.theta_init", "must be finite"));
        }
        Ok(())
    }

    /// `d / (lambda K)`.
    pub fn candidate_prob(&self) -> f64 {
        self.candidates as f64 / (self.activation_prob * self.num_clients as f64)
    }

    /// `K_tar / (lambda K)`.
    pub fn random_prob(&self) -> f64 {
        self.target as f64 / (self.activation_prob * self.num_clients as f64)
    }
}

/// Each of the `k` clients is active independently with probability `lambda`.
pub fn activate<R: Rng + ?Sized>(k: usize, lambda: f64, rng: &mut R) -> Vec<usize> {
    (0..k).filter(|_| bernoulli(lambda, rng)).collect()
}

/// Keeps each active client with probability `d / (lambda K)`.
pub fn candidate_gate<R: Rng + ?Sized>(
    active: &[usize],
    d: usize,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let p = d as f64 / (lambda * k as f64);
    if p > 1.0 + 1e-12 {
        return Err(Error::config(
            "selection.candidates",
            "candidate probability d / (lambda K) exceeds 1",
        ));
    }
    Ok(active.iter().copied().filter(|_| bernoulli(p, rng)).collect())
}

/// Keeps each active client with probability `K_tar / (lambda K)`.
pub fn random_select<R: Rng + ?Sized>(
    active: &[usize],
    k_tar: usize,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let p = (k_tar as f64 / (lambda * k as f64)).min(1.0);
    active.iter().copied().filter(|_| bernoulli(p, rng)).collect()
}

/// The `k_tar` candidates with the largest losses, ties to the smaller id.
/// Returned in increasing id order.
pub fn poc_select(losses: &[(usize, f64)], k_tar: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = losses.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(k_tar).map(|(id, _)| id).collect();
    chosen.sort_unstable();
    chosen
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `sigma(a (loss - theta))`.
pub fn participation_prob(loss: f64, theta: f64, steepness: f64) -> f64 {
    sigmoid(steepness * (loss - theta))
}

pub fn self_select<R: Rng + ?Sized>(loss: f64, theta: f64, steepness: f64, rng: &mut R) -> bool {
    bernoulli(participation_prob(loss, theta, steepness), rng)
}

/// `theta + xi (L_hat - K_tar)`, without clamping.
pub fn update_threshold(theta: f64, l_hat: usize, k_tar: usize, step: f64) -> f64 {
    theta + step * (l_hat as f64 - k_tar as f64)
}

/// Server-side threshold controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdState {
    pub theta: f64,
}

impl ThresholdState {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    /// Applies the threshold step and clamps the result to [`THETA_CLAMP`].
    pub fn update(&mut self, l_hat: usize, k_tar: usize, step: f64) -> f64 {
        let next = update_threshold(self.theta, l_hat, k_tar, step);
        self.theta = next.clamp(THETA_CLAMP.0, THETA_CLAMP.1);
        self.theta
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    if p >= 1.0 {
        return true;
    }
    rng.random::<f64>() < p
}
