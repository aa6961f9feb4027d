//! Synthetic datasets and label-noise simulation.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Feature matrix with its hidden clean labels and observable noisy labels.
///
/// Clean labels are fixed at construction. Training code only ever sees a
/// [`TrainView`], which carries no clean labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    clean_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    n_classes: usize,
    dim: usize,
}

/// What a learner is allowed to see of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub features: &'a [f64],
    pub noisy_labels: &'a [usize],
    pub n_classes: usize,
    pub dim: usize,
}

impl TrainView<'_> {
    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        n_classes: usize,
        clean_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::invalid("dim and n_classes must be positive"));
        }
        if clean_labels.is_empty() {
            return Err(Error::invalid("dataset must hold at least one sample"));
        }
        let n = clean_labels.len();
        Error::check_dim(n, noisy_labels.len())?;
        Error::check_dim(n * dim, features.len())?;
        if let Some(&label) = clean_labels
            .iter()
            .chain(&noisy_labels)
            .find(|&&l| l >= n_classes)
        {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if !crate::math::all_finite(&features) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self { features, clean_labels, noisy_labels, n_classes, dim })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// `true` for samples whose observed label differs from the clean one.
    pub fn mislabeled_mask(&self) -> Vec<bool> {
        self.clean_labels.iter().zip(&self.noisy_labels).map(|(c, n)| c != n).collect()
    }

    /// Fraction of observed labels that match the clean labels.
    pub fn label_accuracy(&self) -> f64 {
        let agree = self.clean_labels.iter().zip(&self.noisy_labels).filter(|(c, n)| c == n).count();
        agree as f64 / self.len() as f64
    }

    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            features: &self.features,
            noisy_labels: &self.noisy_labels,
            n_classes: self.n_classes,
            dim: self.dim,
        }
    }

    /// Copy of the dataset with every noisy label reset to its clean label.
    pub fn with_clean_observations(&self) -> Self {
        Self { noisy_labels: self.clean_labels.clone(), ..self.clone() }
    }
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    v
}

/// Centre of class `c`: the standard basis vector `e_{c mod dim}`, scaled by
/// `1 + c / dim` so that classes beyond `dim` land further out on the same axes.
pub fn blob_centre(c: usize, dim: usize) -> Vec<f64> {
    let mut centre = vec![0.0; dim];
    centre[c % dim] = 1.0 + (c / dim) as f64;
    centre
}

/// Isotropic Gaussian blobs around [`blob_centre`]s with standard deviation
/// `spread`. Samples are grouped by class; noisy labels start equal to clean.
pub fn make_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("n_classes, per_class and dim must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread must be a positive finite number"));
    }
    let mut rng = rng_from_seed(seed);
    let n = n_classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        let centre = blob_centre(c, dim);
        for _ in 0..per_class {
            for &m in &centre {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, dim, n_classes, labels.clone(), labels)
}

/// Row-stochastic label transition matrix, `q[i][j] = Pr[observed j | clean i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    n_classes: usize,
    q: Vec<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_classes = rows.len();
        if n_classes == 0 {
            return Err(Error::invalid("transition matrix must have at least one row"));
        }
        let mut q = Vec::with_capacity(n_classes * n_classes);
        for row in &rows {
            Error::check_dim(n_classes, row.len())?;
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid("transition probabilities must lie in [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid("transition matrix rows must sum to 1"));
            }
            q.extend_from_slice(row);
        }
        Ok(Self { n_classes, q })
    }

    pub fn identity(n_classes: usize) -> Self {
        let mut q = vec![0.0; n_classes * n_classes];
        for i in 0..n_classes {
            q[i * n_classes + i] = 1.0;
        }
        Self { n_classes, q }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n_classes + j]
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::invalid("noise rate must lie in [0, 1]"))
    }
}

/// Uniform flips: `1 - epsilon` on the diagonal, `epsilon / (C - 1)` elsewhere.
pub fn symmetric_matrix(n_classes: usize, epsilon: f64) -> Result<TransitionMatrix> {
    check_epsilon(epsilon)?;
    if n_classes == 0 {
        return Err(Error::invalid("n_classes must be positive"));
    }
    if n_classes == 1 {
        return if epsilon == 0.0 {
            Ok(TransitionMatrix::identity(1))
        } else {
            Err(Error::invalid("a single class cannot be flipped"))
        };
    }
    let off = epsilon / (n_classes - 1) as f64;
    let mut q = vec![off; n_classes * n_classes];
    for i in 0..n_classes {
        q[i * n_classes + i] = 1.0 - epsilon;
    }
    Ok(TransitionMatrix { n_classes, q })
}

/// Pairwise flips: each mapped source class `i -> j` keeps `1 - epsilon` and
/// sends `epsilon` to `j`. Unmapped rows are identity.
pub fn asymmetric_matrix(
    n_classes: usize,
    epsilon: f64,
    pair_map: &[(usize, usize)],
) -> Result<TransitionMatrix> {
    check_epsilon(epsilon)?;
    let mut m = TransitionMatrix::identity(n_classes);
    let mut seen = vec![false; n_classes];
    for &(src, dst) in pair_map {
        for label in [src, dst] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        if src == dst {
            return Err(Error::invalid("a class cannot be mapped onto itself"));
        }
        if core::mem::replace(&mut seen[src], true) {
            return Err(Error::invalid("duplicate source class in pair map"));
        }
        m.q[src * n_classes + src] = 1.0 - epsilon;
        m.q[src * n_classes + dst] = epsilon;
    }
    Ok(m)
}

/// Redraws every observed label from the transition row of its clean label.
pub fn inject_noise(dataset: &LabeledDataset, q: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    Error::check_dim(dataset.n_classes, q.n_classes)?;
    let mut rng = rng_from_seed(seed);
    let noisy_labels = dataset
        .clean_labels
        .iter()
        .map(|&c| sample_row(q.row(c), rng.random::<f64>()))
        .collect();
    Ok(LabeledDataset { noisy_labels, ..dataset.clone() })
}

/// The Gaussian-blob noisy-label benchmark: a noisy training split and a
/// clean test split drawn around the same centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobBenchmark {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Symmetric flip rate applied to the training labels.
    pub noise_rate: f64,
}

impl Default for BlobBenchmark {
    fn default() -> Self {
        Self { n_classes: 8, train_per_class: 1250, test_per_class: 250, dim: 32, spread: 0.35, noise_rate: 0.4 }
    }
}

impl BlobBenchmark {
    /// `(train, test)` for one seed. Data, test data and noise each draw from
    /// their own derived stream.
    pub fn build(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        let clean = make_blobs(self.n_classes, self.train_per_class, self.dim, self.spread, derive_seed(seed, stream::DATA))?;
        let test = make_blobs(self.n_classes, self.test_per_class, self.dim, self.spread, derive_seed(seed, stream::TEST_DATA))?;
        let q = symmetric_matrix(self.n_classes, self.noise_rate)?;
        let train = inject_noise(&clean, &q, derive_seed(seed, stream::NOISE))?;
        Ok((train, test))
    }
}

/// Inverse-CDF draw from a categorical row; the last positive entry absorbs
/// rounding so a zero-probability class is never returned.
fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}
