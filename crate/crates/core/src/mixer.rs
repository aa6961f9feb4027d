//! Posterior-weighted mixing of a sample with its nearest neighbours, and the
//! two-term loss on the resulting synthetic samples.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{softmax, Gradients, MlpModel, LOG_FLOOR};

/// Convex weights for a sample (`lambda`) and its K neighbours (`betas`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub lambda: f64,
    pub betas: Vec<f64>,
    /// The posteriors summed to (almost) zero and uniform weights were used.
    pub fallback: bool,
}

const MIN_DENOMINATOR: f64 = 1e-12;

impl MixWeights {
    /// `1 / (K + 1)` for the sample and each neighbour.
    pub fn uniform(k: usize) -> Self {
        let w = 1.0 / (k + 1) as f64;
        Self { lambda: w, betas: vec![w; k], fallback: false }
    }

    /// Weights that keep the sample unchanged.
    pub fn identity(k: usize) -> Self {
        Self { lambda: 1.0, betas: vec![0.0; k], fallback: false }
    }

    /// A draw from the symmetric Dirichlet(1, ..., 1) over `K + 1` weights.
    pub fn random(k: usize, rng: &mut impl rand::Rng) -> Self {
        let mut draws: Vec<f64> = (0..=k).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
        let sum: f64 = draws.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Self::uniform(k);
        }
        draws.iter_mut().for_each(|d| *d /= sum);
        let lambda = draws.remove(0);
        Self { lambda, betas: draws, fallback: false }
    }

    pub fn k(&self) -> usize {
        self.betas.len()
    }

    pub fn total(&self) -> f64 {
        self.lambda + self.betas.iter().sum::<f64>()
    }
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// Each weight is a clean posterior divided by the sum of the sample's and its
/// neighbours' clean posteriors.
pub fn mix_weights(self_posterior: f64, neighbor_posteriors: &[f64]) -> Result<MixWeights> {
    if neighbor_posteriors.is_empty() {
        return Err(Error::invalid("mixing needs at least one neighbour"));
    }
    if !is_probability(self_posterior) || !neighbor_posteriors.iter().all(|&p| is_probability(p)) {
        return Err(Error::invalid("posteriors must lie in [0, 1]"));
    }
    let denom = self_posterior + neighbor_posteriors.iter().sum::<f64>();
    if denom < MIN_DENOMINATOR {
        let mut w = MixWeights::uniform(neighbor_posteriors.len());
        w.fallback = true;
        return Ok(w);
    }
    Ok(MixWeights {
        lambda: self_posterior / denom,
        betas: neighbor_posteriors.iter().map(|p| p / denom).collect(),
        fallback: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub x_mixed: Vec<f64>,
    pub y_mixed: Vec<f64>,
}

/// A neighbour's input and label as seen by the mixer.
#[derive(Debug, Clone, Copy)]
pub struct NeighborRef<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// `x~ = lambda x + sum_k beta_k x_k` and the same combination of labels.
pub fn synthesize(x: &[f64], y_target: &[f64], neighbors: &[NeighborRef<'_>], weights: &MixWeights) -> Result<SyntheticSample> {
    Error::check_dim(neighbors.len(), weights.k())?;
    let mut x_mixed: Vec<f64> = x.iter().map(|v| weights.lambda * v).collect();
    let mut y_mixed: Vec<f64> = y_target.iter().map(|v| weights.lambda * v).collect();
    for (nb, &beta) in neighbors.iter().zip(&weights.betas) {
        Error::check_dim(x.len(), nb.x.len())?;
        Error::check_dim(y_target.len(), nb.y.len())?;
        axpy(beta, nb.x, &mut x_mixed);
        axpy(beta, nb.y, &mut y_mixed);
    }
    Ok(SyntheticSample { x_mixed, y_mixed })
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// One synthetic sample together with the pieces of its two-term target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedExample {
    pub x_mixed: Vec<f64>,
    pub lambda: f64,
    /// The sample's own (possibly corrected) target.
    pub target: Vec<f64>,
    pub betas: Vec<f64>,
    /// `K x C`, row k is neighbour k's label.
    pub neighbor_labels: Vec<f64>,
}

impl MixedExample {
    /// `sum_k beta_k y_k`.
    pub fn neighbor_target(&self) -> Vec<f64> {
        let c = self.target.len();
        let mut out = vec![0.0; c];
        for (row, &beta) in self.neighbor_labels.chunks_exact(c).zip(&self.betas) {
            axpy(beta, row, &mut out);
        }
        out
    }

    /// `lambda t + sum_k beta_k y_k`.
    pub fn mixed_target(&self) -> Vec<f64> {
        let mut out = self.neighbor_target();
        axpy(self.lambda, &self.target, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    /// Batch mean of `-lambda t^T log p~`.
    pub own_term: f64,
    /// Batch mean of `-(sum_k beta_k y_k)^T log p~`.
    pub neighbor_term: f64,
    pub grads: Gradients,
    /// Per-sample output error `p~ - (lambda t + sum_k beta_k y_k)`, `B x C`.
    pub coefficients: Vec<f64>,
    /// Softmax outputs on the synthetic inputs, `B x C`.
    pub probs: Vec<f64>,
}

/// Mean two-term loss over the batch and its gradient.
pub fn mixnn_batch_loss(model: &MlpModel, batch: &[MixedExample]) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (d, c) = (model.input_dim(), model.n_classes());
    let mut x = Vec::with_capacity(batch.len() * d);
    for ex in batch {
        Error::check_dim(d, ex.x_mixed.len())?;
        Error::check_dim(c, ex.target.len())?;
        Error::check_dim(ex.betas.len() * c, ex.neighbor_labels.len())?;
        x.extend_from_slice(&ex.x_mixed);
    }
    let rows = batch.len();
    let acts = model.forward_batch(&x, rows);
    let logits = acts.logits();
    let inv = 1.0 / rows as f64;
    let mut own_term = 0.0;
    let mut neighbor_term = 0.0;
    let mut probs = Vec::with_capacity(rows * c);
    let mut coefficients = Vec::with_capacity(rows * c);
    let mut logit_grads = Vec::with_capacity(rows * c);
    for (b, ex) in batch.iter().enumerate() {
        let p = softmax(&logits[b * c..(b + 1) * c]);
        let nb = ex.neighbor_target();
        let mut own = 0.0;
        let mut other = 0.0;
        for k in 0..c {
            let logp = libm::log(p[k].max(LOG_FLOOR));
            if ex.target[k] != 0.0 {
                own -= ex.lambda * ex.target[k] * logp;
            }
            if nb[k] != 0.0 {
                other -= nb[k] * logp;
            }
        }
        own_term += own;
        neighbor_term += other;
        let mass = ex.lambda * ex.target.iter().sum::<f64>() + nb.iter().sum::<f64>();
        for k in 0..c {
            let w = ex.lambda * ex.target[k] + nb[k];
            coefficients.push(p[k] - w);
            logit_grads.push((mass * p[k] - w) * inv);
        }
        probs.extend(p);
    }
    let own_term = own_term * inv;
    let neighbor_term = neighbor_term * inv;
    let loss = own_term + neighbor_term;
    if !loss.is_finite() {
        return Err(Error::NonFinite("mixed loss"));
    }
    let grads = model.backward_batch(&acts, &logit_grads);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(BatchLoss { loss, own_term, neighbor_term, grads, coefficients, probs })
}
