//! Per-sample loss profiling and a two-component 1-D Gaussian mixture fitted
//! by EM, whose low-mean component models correctly labelled samples.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::network::{ce_loss, MlpModel};

/// Cross-entropy of every sample against its observed label, raw and
/// min-max normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub epoch: usize,
}

const LOSS_CHUNK: usize = 512;

/// Losses of the unmixed inputs against the observed noisy labels.
pub fn per_sample_losses(model: &MlpModel, data: &TrainView<'_>, epoch: usize) -> Result<LossProfile> {
    Error::check_dim(model.input_dim(), data.dim)?;
    Error::check_dim(model.n_classes(), data.n_classes)?;
    let c = data.n_classes;
    let mut raw = Vec::with_capacity(data.len());
    let mut target = vec![0.0; c];
    for start in (0..data.len()).step_by(LOSS_CHUNK) {
        let rows = LOSS_CHUNK.min(data.len() - start);
        let x = &data.features[start * data.dim..(start + rows) * data.dim];
        let probs = model.forward_batch(x, rows).probabilities();
        for (b, p) in probs.chunks_exact(c).enumerate() {
            let label = data.noisy_labels[start + b];
            target[label] = 1.0;
            raw.push(ce_loss(p, &target));
            target[label] = 0.0;
        }
    }
    if raw.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("per-sample losses"));
    }
    let normalized = min_max_normalize(&raw);
    Ok(LossProfile { raw, normalized, epoch })
}

/// `(l - min) / (max - min)`, or 0.5 everywhere when all values coincide.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        let range = max - min;
        values.iter().map(|v| (v - min) / range).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Two-component mixture; component 0 has the smaller mean and stands for
/// clean samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub pi: [f64; 2],
    pub mu: [f64; 2],
    pub var: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100, var_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub gmm: Gmm2,
    pub iterations: usize,
    /// Set when the input carried no spread to fit.
    pub degenerate: bool,
    pub log_likelihood: f64,
    /// Log-likelihood at the initial parameters and after each EM step.
    pub ll_trace: Vec<f64>,
}

fn log_gauss(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * libm::log(2.0 * core::f64::consts::PI * var) - (x - mu) * (x - mu) / (2.0 * var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

impl Gmm2 {
    fn log_joint(&self, x: f64) -> [f64; 2] {
        [
            libm::log(self.pi[0]) + log_gauss(x, self.mu[0], self.var[0]),
            libm::log(self.pi[1]) + log_gauss(x, self.mu[1], self.var[1]),
        ]
    }

    pub fn density(&self, x: f64) -> f64 {
        let [a, b] = self.log_joint(x);
        libm::exp(log_sum_exp(a, b))
    }

    fn sorted(mut self) -> Self {
        if self.mu[0] > self.mu[1] {
            self.pi.swap(0, 1);
            self.mu.swap(0, 1);
            self.var.swap(0, 1);
        }
        self
    }
}

/// `P(clean | loss)` under `gmm`.
pub fn clean_posterior(gmm: &Gmm2, loss: f64) -> f64 {
    let [a, b] = gmm.log_joint(loss);
    1.0 / (1.0 + libm::exp(b - a))
}

/// `P(mislabeled | loss)`, the complement of [`clean_posterior`].
pub fn wrong_posterior(gmm: &Gmm2, loss: f64) -> f64 {
    let [a, b] = gmm.log_joint(loss);
    1.0 / (1.0 + libm::exp(a - b))
}

pub fn log_likelihood(gmm: &Gmm2, data: &[f64]) -> f64 {
    data.iter()
        .map(|&x| {
            let [a, b] = gmm.log_joint(x);
            log_sum_exp(a, b)
        })
        .sum()
}

/// One E-step plus M-step.
pub fn em_step(gmm: &Gmm2, data: &[f64], var_floor: f64) -> Gmm2 {
    let mut weight = [0.0; 2];
    let mut first = [0.0; 2];
    for &x in data {
        let r0 = clean_posterior(gmm, x);
        let r = [r0, 1.0 - r0];
        for m in 0..2 {
            weight[m] += r[m];
            first[m] += r[m] * x;
        }
    }
    let mut next = *gmm;
    for m in 0..2 {
        if weight[m] > 1e-300 {
            next.mu[m] = first[m] / weight[m];
        }
    }
    let mut second = [0.0; 2];
    for &x in data {
        let r0 = clean_posterior(gmm, x);
        let r = [r0, 1.0 - r0];
        for m in 0..2 {
            let d = x - next.mu[m];
            second[m] += r[m] * d * d;
        }
    }
    let total = weight[0] + weight[1];
    for m in 0..2 {
        if weight[m] > 1e-300 {
            next.var[m] = (second[m] / weight[m]).max(var_floor);
        }
    }
    next.pi = [weight[0] / total, 1.0 - weight[0] / total];
    next
}

fn mean_var(xs: &[f64], floor: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(floor))
}

/// EM fit started from a median split of the sorted losses.
pub fn fit_gmm_em(losses: &[f64], opts: &EmOptions) -> Result<GmmFit> {
    if losses.len() < 2 {
        return Err(Error::invalid("a mixture fit needs at least two losses"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("losses"));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi - lo <= 1e-12 {
        let gmm = Gmm2 { pi: [0.5, 0.5], mu: [lo, lo], var: [opts.var_floor; 2] };
        let ll = log_likelihood(&gmm, losses);
        return Ok(GmmFit { gmm, iterations: 0, degenerate: true, log_likelihood: ll, ll_trace: vec![ll] });
    }
    let half = sorted.len() / 2;
    let (m0, v0) = mean_var(&sorted[..half], opts.var_floor);
    let (m1, v1) = mean_var(&sorted[half..], opts.var_floor);
    let mut gmm = Gmm2 { pi: [0.5, 0.5], mu: [m0, m1], var: [v0, v1] };
    let mut ll = log_likelihood(&gmm, losses);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        gmm = em_step(&gmm, losses, opts.var_floor);
        iterations += 1;
        let next = log_likelihood(&gmm, losses);
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < opts.tol {
            break;
        }
    }
    Ok(GmmFit { gmm: gmm.sorted(), iterations, degenerate: false, log_likelihood: ll, ll_trace: trace })
}
