//! Feed-forward ReLU classifier with hand-written backpropagation, SGD with
//! momentum and a cosine-annealed learning rate.
//!
//! Weights are stored input-major (`w[i * outputs + o]`), so a batch forward
//! pass is the plain product `X W`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::all_finite;
use crate::rng::rng_from_seed;

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs x outputs`, input-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.bias.len() == self.outputs
    }

    /// `out[b] = bias + x[b] W` for every row of `x`.
    fn apply(&self, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        // SAFETY: x is rows x inputs, weights inputs x outputs and out rows x
        // outputs, all row-major and contiguous.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                self.inputs,
                self.outputs,
                1.0,
                x.as_ptr(),
                self.inputs as isize,
                1,
                self.weights.as_ptr(),
                self.outputs as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                self.outputs as isize,
                1,
            );
        }
    }
}

/// ReLU multilayer perceptron. The last hidden activation is the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

/// Output of a single-sample forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl MlpModel {
    /// He-uniform initialised network `input -> hidden[0] -> ... -> n_classes`,
    /// zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        if input_dim == 0 || n_classes == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(n_classes);
        let layers = widths
            .windows(2)
            .map(|w| {
                let mut layer = Dense::zeros(w[0], w[1]);
                let bound = libm::sqrt(6.0 / w[0] as f64);
                for v in &mut layer.weights {
                    *v = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        for layer in &layers {
            if !layer.is_consistent() || layer.inputs == 0 || layer.outputs == 0 {
                return Err(Error::invalid("layer parameter shapes do not match their widths"));
            }
            if !all_finite(&layer.weights) || !all_finite(&layer.bias) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        for pair in layers.windows(2) {
            Error::check_dim(pair[0].outputs, pair[1].inputs)?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        Error::check_dim(self.input_dim(), x.len())?;
        let acts = self.forward_batch(x, 1);
        let logits = acts.logits().to_vec();
        if !all_finite(&logits) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Forward { embedding: acts.embeddings().to_vec(), logits })
    }

    /// Forward pass over `rows` inputs laid out row-major in `x`, keeping every
    /// activation for a later [`MlpModel::backward_batch`].
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Activations {
        debug_assert_eq!(x.len(), rows * self.input_dim());
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&values[l], rows, &mut out);
            if l < last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            values.push(out);
        }
        Activations { rows, values }
    }

    /// Reverse pass given the loss gradient with respect to the logits.
    pub fn backward_batch(&self, acts: &Activations, logit_grads: &[f64]) -> Gradients {
        let rows = acts.rows;
        let mut grads = Gradients::zeros_like(self);
        let mut delta = logit_grads.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts.values[l];
            let g = &mut grads.layers[l];
            for d in delta.chunks_exact(layer.outputs) {
                for (gb, &db) in g.bias.iter_mut().zip(d) {
                    *gb += db;
                }
            }
            // dW = X^T delta, read through a transposed view of the input.
            // SAFETY: input is rows x inputs, delta rows x outputs, g.weights
            // inputs x outputs; every stride stays inside its buffer.
            unsafe {
                matrixmultiply::dgemm(
                    layer.inputs,
                    rows,
                    layer.outputs,
                    1.0,
                    input.as_ptr(),
                    1,
                    layer.inputs as isize,
                    delta.as_ptr(),
                    layer.outputs as isize,
                    1,
                    0.0,
                    g.weights.as_mut_ptr(),
                    layer.outputs as isize,
                    1,
                );
            }
            if l == 0 {
                break;
            }
            // Propagate through the weights (delta W^T), then through the ReLU
            // that produced `input`.
            let mut next = vec![0.0; rows * layer.inputs];
            // SAFETY: delta is rows x outputs, weights viewed as outputs x
            // inputs, next rows x inputs.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.outputs,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    layer.outputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    1,
                    layer.outputs as isize,
                    0.0,
                    next.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
            for (n, &a) in next.iter_mut().zip(input) {
                if a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        grads
    }
}

/// Per-layer activations of a batch; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    rows: usize,
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn logits(&self) -> &[f64] {
        &self.values[self.values.len() - 1]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.values[self.values.len() - 2]
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Vec<f64> {
        let logits = self.logits();
        let c = logits.len() / self.rows.max(1);
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.chunks(c.max(1)) {
            out.extend(softmax(row));
        }
        out
    }
}

/// Parameter-shaped gradient (or velocity) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self { layers: model.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }

    /// Flattened view in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    fn matches(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `-sum_c target_c * ln(max(probs_c, LOG_FLOOR))`. Accepts soft targets.
pub fn ce_loss(probs: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(probs.len(), target.len());
    -probs
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * libm::log(p.max(LOG_FLOOR)))
        .sum::<f64>()
}

/// Single-sample cross-entropy gradient: parameter gradients and the output
/// error `p - target`.
pub fn backward(model: &MlpModel, x: &[f64], target: &[f64]) -> Result<(Gradients, Vec<f64>)> {
    Error::check_dim(model.input_dim(), x.len())?;
    Error::check_dim(model.n_classes(), target.len())?;
    let acts = model.forward_batch(x, 1);
    let p = softmax(acts.logits());
    let coeff: Vec<f64> = p.iter().zip(target).map(|(p, t)| p - t).collect();
    let grads = model.backward_batch(&acts, &coeff);
    if !all_finite(&coeff) || !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok((grads, coeff))
}

/// Mean cross-entropy over a batch of inputs against per-row targets, with
/// the gradient of that mean.
pub fn ce_batch(model: &MlpModel, x: &[f64], targets: &[f64], rows: usize) -> (f64, Gradients) {
    let c = model.n_classes();
    let acts = model.forward_batch(x, rows);
    let probs = acts.probabilities();
    let inv = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut coeff = vec![0.0; rows * c];
    for b in 0..rows {
        let p = &probs[b * c..(b + 1) * c];
        let t = &targets[b * c..(b + 1) * c];
        loss += ce_loss(p, t);
        let mass: f64 = t.iter().sum();
        for k in 0..c {
            coeff[b * c + k] = (mass * p[k] - t[k]) * inv;
        }
    }
    (loss * inv, model.backward_batch(&acts, &coeff))
}

/// Velocity buffers for SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Gradients,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        Ok(Self { velocity: Gradients::zeros_like(model), momentum, weight_decay })
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// `v <- momentum * v + grad + weight_decay * theta; theta <- theta - lr * v`.
/// Weight decay applies to biases as well.
pub fn sgd_step(model: &mut MlpModel, state: &mut OptimizerState, grads: &Gradients, lr: f64) -> Result<()> {
    if !grads.matches(model) || !state.velocity.matches(model) {
        return Err(Error::invalid("gradient shapes do not match the model"));
    }
    let (m, wd) = (state.momentum, state.weight_decay);
    for ((layer, v), g) in model.layers.iter_mut().zip(&mut state.velocity.layers).zip(&grads.layers) {
        let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
        let vel = v.weights.iter_mut().chain(v.bias.iter_mut());
        let grad = g.weights.iter().chain(&g.bias);
        for ((theta, v), g) in params.zip(vel).zip(grad) {
            *v = m * *v + g + wd * *theta;
            *theta -= lr * *v;
        }
    }
    Ok(())
}

/// Cosine annealing between `lr_max` and `lr_min` over `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn new(lr_max: f64, lr_min: f64, period: usize) -> Result<Self> {
        let s = Self { lr_max, lr_min, period };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::invalid("learning rates must satisfy 0 < lr_min <= lr_max"));
        }
        if self.period == 0 {
            return Err(Error::invalid("cosine period must be at least one epoch"));
        }
        Ok(())
    }

    /// Rate at fractional epoch `epoch`, restarting every `period` epochs.
    pub fn at(&self, epoch: f64) -> f64 {
        let t = epoch % self.period as f64;
        cosine_lr(t, self)
    }
}

/// `lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2` for `t` within a cycle.
pub fn cosine_lr(t: f64, schedule: &LrSchedule) -> f64 {
    let frac = t / schedule.period as f64;
    schedule.lr_min
        + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + libm::cos(core::f64::consts::PI * frac))
}
