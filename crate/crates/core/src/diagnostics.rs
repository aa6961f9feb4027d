//! Evaluation-side measurements. These are the only functions that look at
//! clean labels; nothing in the training path calls them.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::network::MlpModel;

pub const HISTOGRAM_BINS: usize = 50;

const EVAL_CHUNK: usize = 512;

/// Argmax prediction for every row of `features`.
pub fn predict(model: &MlpModel, features: &[f64]) -> Result<Vec<usize>> {
    let d = model.input_dim();
    if !features.len().is_multiple_of(d) {
        return Err(Error::invalid("feature matrix is not a whole number of rows"));
    }
    let c = model.n_classes();
    let n = features.len() / d;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let rows = EVAL_CHUNK.min(n - start);
        let acts = model.forward_batch(&features[start * d..(start + rows) * d], rows);
        out.extend(acts.logits().chunks_exact(c).map(argmax));
    }
    Ok(out)
}

/// Penultimate-layer activations for every row, `N x embedding_dim`.
pub fn embeddings(model: &MlpModel, features: &[f64]) -> Result<Vec<f64>> {
    let d = model.input_dim();
    if !features.len().is_multiple_of(d) {
        return Err(Error::invalid("feature matrix is not a whole number of rows"));
    }
    let n = features.len() / d;
    let mut out = Vec::with_capacity(n * model.embedding_dim());
    for start in (0..n).step_by(EVAL_CHUNK) {
        let rows = EVAL_CHUNK.min(n - start);
        let acts = model.forward_batch(&features[start * d..(start + rows) * d], rows);
        out.extend_from_slice(acts.embeddings());
    }
    Ok(out)
}

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Top-1 accuracy against the clean labels.
pub fn evaluate(model: &MlpModel, dataset: &LabeledDataset) -> Result<f64> {
    Error::check_dim(model.input_dim(), dataset.dim())?;
    let preds = predict(model, dataset.features())?;
    Ok(accuracy(&preds, dataset.clean_labels()))
}

/// Area under the ROC curve of `scores` as a detector of `positive`, with ties
/// counted as one half. `None` when either class is absent.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (average) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Fixed-width histogram over `[0, 1]`; 1.0 falls in the last bin.
pub fn histogram(values: impl IntoIterator<Item = f64>) -> Vec<u64> {
    let mut bins = vec![0u64; HISTOGRAM_BINS];
    for v in values {
        let b = libm::floor(v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize;
        bins[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    bins
}

/// Mean of the values selected by `mask == want`; `None` if the group is empty.
pub fn group_mean(values: &[f64], mask: &[bool], want: bool) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .zip(mask)
        .filter(|(v, &m)| m == want && v.is_finite())
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
