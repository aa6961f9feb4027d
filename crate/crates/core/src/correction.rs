//! Soft targets maintained by an exponential moving average of predictions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::argmax;

/// Per-sample label distributions, `N x C` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTargets {
    targets: Vec<f64>,
    n_classes: usize,
    /// First epoch at which updates take effect.
    pub start_epoch: usize,
    /// EMA momentum in `[0, 1)`; larger keeps more of the old target.
    pub alpha: f64,
}

/// One-hot targets of the observed labels.
pub fn init_targets(noisy_labels: &[usize], n_classes: usize, start_epoch: usize, alpha: f64) -> Result<SoftTargets> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("EMA momentum must lie in [0, 1]"));
    }
    let mut targets = vec![0.0; noisy_labels.len() * n_classes];
    for (i, &label) in noisy_labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        targets[i * n_classes + label] = 1.0;
    }
    Ok(SoftTargets { targets, n_classes, start_epoch, alpha })
}

impl SoftTargets {
    pub fn len(&self) -> usize {
        self.targets.len() / self.n_classes.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.targets
    }

    /// `t_i <- alpha t_i + (1 - alpha) p` once `epoch >= start_epoch`.
    /// Returns whether the target changed.
    pub fn ema_update(&mut self, i: usize, p: &[f64], epoch: usize) -> Result<bool> {
        let len = self.len();
        if i >= len {
            return Err(Error::InvalidSample { id: i, len });
        }
        Error::check_dim(self.n_classes, p.len())?;
        if epoch < self.start_epoch {
            return Ok(false);
        }
        let a = self.alpha;
        let c = self.n_classes;
        for (t, &pk) in self.targets[i * c..(i + 1) * c].iter_mut().zip(p) {
            *t = a * *t + (1.0 - a) * pk;
        }
        Ok(true)
    }

    /// Argmax class of every target, ties to the smaller class index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.targets.chunks_exact(self.n_classes).map(argmax).collect()
    }
}

/// Fraction of targets whose argmax equals the clean class.
pub fn correction_accuracy(targets: &SoftTargets, clean_labels: &[usize]) -> Result<f64> {
    Error::check_dim(targets.len(), clean_labels.len())?;
    if clean_labels.is_empty() {
        return Ok(0.0);
    }
    let hits = targets.hard_labels().iter().zip(clean_labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / clean_labels.len() as f64)
}

/// `counts[clean][argmax target]`, row-major `C x C`.
pub fn confusion_matrix(targets: &SoftTargets, clean_labels: &[usize]) -> Result<Vec<u64>> {
    Error::check_dim(targets.len(), clean_labels.len())?;
    let c = targets.n_classes;
    let mut counts = vec![0u64; c * c];
    for (&clean, pred) in clean_labels.iter().zip(targets.hard_labels()) {
        if clean >= c {
            return Err(Error::LabelOutOfRange { label: clean, n_classes: c });
        }
        counts[clean * c + pred] += 1;
    }
    Ok(counts)
}
