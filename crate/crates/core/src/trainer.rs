//! The training loop: CE warmup, then per epoch a loss-mixture fit, a
//! neighbour index rebuild over embeddings, and mini-batches of mixed samples
//! with EMA label correction.
//!
//! [`Trainer`] only ever holds a [`TrainView`]; clean labels enter through
//! [`epoch_metrics`], which is called after each epoch with the full dataset.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::correction::{confusion_matrix, correction_accuracy, init_targets, SoftTargets};
use crate::data::{LabeledDataset, TrainView};
use crate::diagnostics::{self, auc, group_mean, histogram};
use crate::error::{Error, Result};
use crate::gmm::{clean_posterior, fit_gmm_em, per_sample_losses, EmOptions, GmmFit, LossProfile};
use crate::knn::{HnswIndex, HnswParams, SearchScratch};
use crate::mixer::{mix_weights, mixnn_batch_loss, MixWeights, MixedExample};
use crate::network::{LrSchedule, MlpModel, OptimizerState, sgd_step};
use crate::rng::{derive_seed, derived_rng, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain cross-entropy on the observed labels throughout.
    CeBaseline,
    MixNN,
    /// Uniform `1 / (K + 1)` weights instead of posterior weights.
    MixNNAvg,
    /// Dirichlet(1, ..., 1) weights drawn per sample.
    MixNNRdm,
    /// Targets frozen at the observed labels.
    MixNNNoCorrection,
    /// Uniformly random partners instead of nearest neighbours.
    MixNNRandomNeighbors,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::CeBaseline,
        Mode::MixNN,
        Mode::MixNNAvg,
        Mode::MixNNRdm,
        Mode::MixNNNoCorrection,
        Mode::MixNNRandomNeighbors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CeBaseline => "ce",
            Mode::MixNN => "mixnn",
            Mode::MixNNAvg => "mixnn_avg",
            Mode::MixNNRdm => "mixnn_rdm",
            Mode::MixNNNoCorrection => "mixnn_no_correction",
            Mode::MixNNRandomNeighbors => "mixnn_random_neighbors",
        }
    }

    fn mixes(self) -> bool {
        self != Mode::CeBaseline
    }

    fn corrects(self) -> bool {
        !matches!(self, Mode::CeBaseline | Mode::MixNNNoCorrection)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "ce_baseline" => "ce",
            "avg" => "mixnn_avg",
            "rdm" => "mixnn_rdm",
            "no_correction" => "mixnn_no_correction",
            "random_neighbors" | "random_neighbours" | "mixnn_random_neighbours" => "mixnn_random_neighbors",
            other => other,
        };
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == alias)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown mode `{s}`")))
    }
}

/// Epoch at which label correction starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartEpoch {
    Absolute(usize),
    /// Fraction of the total epoch count, rounded.
    Fraction(f64),
}

impl StartEpoch {
    pub fn resolve(self, epochs: usize) -> usize {
        match self {
            StartEpoch::Absolute(e) => e,
            StartEpoch::Fraction(f) => libm::round(f * epochs as f64) as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total epochs, warmup included.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Neighbours per sample; 0 trains on corrected targets without mixing.
    pub k: usize,
    pub alpha: f64,
    pub start_epoch: StartEpoch,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: Mode,
    pub hnsw: HnswParams,
    pub hidden: Vec<usize>,
    pub em: EmOptions,
    /// Neighbours contribute their soft targets instead of observed labels.
    pub neighbors_use_soft_targets: bool,
    /// A sample is never its own neighbour.
    pub exclude_self: bool,
    /// Test hook: replaces every clean posterior with this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_posterior: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 10,
            batch_size: 128,
            k: 1,
            alpha: 0.9,
            start_epoch: StartEpoch::Fraction(0.2),
            lr: LrSchedule { lr_max: 0.02, lr_min: 0.001, period: 10 },
            momentum: 0.9,
            weight_decay: 0.001,
            seed: 0,
            mode: Mode::MixNN,
            hnsw: HnswParams::default(),
            hidden: vec![256, 256, 32],
            em: EmOptions::default(),
            neighbors_use_soft_targets: false,
            exclude_self: true,
            forced_posterior: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::invalid("warmup_epochs must be smaller than epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1)"));
        }
        if let StartEpoch::Fraction(f) = self.start_epoch {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid("start_epoch fraction must lie in [0, 1]"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive and non-empty"));
        }
        if let Some(p) = self.forced_posterior {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("forced_posterior must lie in [0, 1]"));
            }
        }
        if self.em.max_iter == 0 || self.em.var_floor.is_nan() || self.em.var_floor <= 0.0 {
            return Err(Error::invalid("EM needs max_iter > 0 and a positive variance floor"));
        }
        self.lr.validate()?;
        self.hnsw.validate()?;
        if self.k >= 1 && self.hnsw.ef_search < self.k {
            return Err(Error::invalid("hnsw ef_search must be at least k"));
        }
        Ok(())
    }

    pub fn correction_start(&self) -> usize {
        self.start_epoch.resolve(self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Train,
}

/// Everything an epoch produced that training itself may know about.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub phase: Phase,
    /// Loss profile of the epoch-start model.
    pub profile: LossProfile,
    pub gmm: GmmFit,
    /// Clean posterior of every sample, from `gmm`.
    pub posteriors: Vec<f64>,
    /// Norm of `p~ - mixed target` at the sample's last optimisation step.
    pub grad_coefficient: Vec<f64>,
    pub mean_loss: f64,
    pub final_lr: f64,
    pub weight_fallbacks: usize,
    pub corrected: bool,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: TrainView<'a>,
    model: MlpModel,
    opt: OptimizerState,
    targets: SoftTargets,
    epoch: usize,
    shuffle_rng: Rng,
    ablation_rng: Rng,
    one_hots: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: TrainView<'a>) -> Result<Self> {
        let model = MlpModel::new(data.dim, &config.hidden, data.n_classes, derive_seed(config.seed, stream::INIT))?;
        Self::with_model(config, data, model)
    }

    pub fn with_model(config: TrainConfig, data: TrainView<'a>, model: MlpModel) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Error::check_dim(data.dim, model.input_dim())?;
        Error::check_dim(data.n_classes, model.n_classes())?;
        if config.k > 0 && config.mode.mixes() && data.len() < 2 {
            return Err(Error::invalid("mixing needs at least two samples"));
        }
        let opt = OptimizerState::new(&model, config.momentum, config.weight_decay)?;
        let targets = init_targets(data.noisy_labels, data.n_classes, config.correction_start(), config.alpha)?;
        let c = data.n_classes;
        let mut one_hots = vec![0.0; data.len() * c];
        for (i, &l) in data.noisy_labels.iter().enumerate() {
            one_hots[i * c + l] = 1.0;
        }
        Ok(Self {
            shuffle_rng: derived_rng(config.seed, stream::SHUFFLE),
            ablation_rng: derived_rng(config.seed, stream::ABLATION),
            config,
            data,
            model,
            opt,
            targets,
            epoch: 0,
            one_hots,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }

    pub fn targets(&self) -> &SoftTargets {
        &self.targets
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn observed_label(&self, i: usize) -> &[f64] {
        let c = self.data.n_classes;
        &self.one_hots[i * c..(i + 1) * c]
    }

    /// Runs every remaining warmup epoch.
    pub fn warmup(&mut self) -> Result<Vec<EpochReport>> {
        let mut out = Vec::new();
        while self.epoch < self.config.warmup_epochs {
            out.push(self.train_epoch()?);
        }
        Ok(out)
    }

    /// Runs the next epoch: warmup epochs and the CE baseline train on the
    /// observed labels; every other mode mixes.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        if self.is_finished() {
            return Err(Error::invalid("all epochs have already run"));
        }
        let epoch = self.epoch;
        let phase = if epoch < self.config.warmup_epochs { Phase::Warmup } else { Phase::Train };
        let mixing = phase == Phase::Train && self.config.mode.mixes();

        let diverged = |_| Error::Diverged { epoch, batch: 0 };
        let profile = per_sample_losses(&self.model, &self.data, epoch).map_err(diverged)?;
        let gmm = fit_gmm_em(&profile.normalized, &self.config.em)?;
        let posteriors: Vec<f64> = match self.config.forced_posterior {
            Some(p) => vec![p; self.data.len()],
            None => profile.normalized.iter().map(|&l| clean_posterior(&gmm.gmm, l)).collect(),
        };
        let k = if mixing { self.config.k } else { 0 };
        let neighbors = if k > 0 { self.resolve_neighbors(epoch)? } else { Vec::new() };

        let n = self.data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let n_batches = n.div_ceil(self.config.batch_size);
        let correcting = mixing && self.config.mode.corrects() && epoch >= self.targets.start_epoch;

        let mut grad_coefficient = vec![f64::NAN; n];
        let mut loss_sum = 0.0;
        let mut weight_fallbacks = 0;
        let mut lr = self.config.lr.at(epoch as f64);
        let c = self.data.n_classes;
        for (b, ids) in order.chunks(self.config.batch_size).enumerate() {
            if correcting {
                let x: Vec<f64> = ids.iter().flat_map(|&i| self.data.row(i).iter().copied()).collect();
                let probs = self.model.forward_batch(&x, ids.len()).probabilities();
                for (&i, p) in ids.iter().zip(probs.chunks_exact(c)) {
                    self.targets.ema_update(i, p, epoch)?;
                }
            }
            let mut batch = Vec::with_capacity(ids.len());
            for &i in ids {
                let nbrs = if k > 0 { neighbors[i].as_slice() } else { &[] };
                let weights = self.weights_for(i, nbrs, &posteriors)?;
                weight_fallbacks += usize::from(weights.fallback);
                batch.push(self.mixed_example(i, nbrs, &weights, mixing));
            }
            let out = mixnn_batch_loss(&self.model, &batch).map_err(|_| Error::Diverged { epoch, batch: b })?;
            for (&i, coeff) in ids.iter().zip(out.coefficients.chunks_exact(c)) {
                grad_coefficient[i] = libm::sqrt(coeff.iter().map(|v| v * v).sum());
            }
            loss_sum += out.loss * ids.len() as f64;
            lr = self.config.lr.at(epoch as f64 + b as f64 / n_batches as f64);
            sgd_step(&mut self.model, &mut self.opt, &out.grads, lr)?;
        }
        if !self.model.is_finite() {
            return Err(Error::Diverged { epoch, batch: n_batches.saturating_sub(1) });
        }
        self.epoch += 1;
        Ok(EpochReport {
            epoch,
            phase,
            profile,
            gmm,
            posteriors,
            grad_coefficient,
            mean_loss: loss_sum / n as f64,
            final_lr: lr,
            weight_fallbacks,
            corrected: correcting,
        })
    }

    fn weights_for(&mut self, i: usize, nbrs: &[usize], posteriors: &[f64]) -> Result<MixWeights> {
        let k = nbrs.len();
        if k == 0 {
            return Ok(MixWeights::identity(0));
        }
        match self.config.mode {
            Mode::MixNNAvg => Ok(MixWeights::uniform(k)),
            Mode::MixNNRdm => Ok(MixWeights::random(k, &mut self.ablation_rng)),
            _ => {
                let nb: Vec<f64> = nbrs.iter().map(|&j| posteriors[j]).collect();
                mix_weights(posteriors[i], &nb)
            }
        }
    }

    fn mixed_example(&self, i: usize, nbrs: &[usize], w: &MixWeights, mixing: bool) -> MixedExample {
        let c = self.data.n_classes;
        let target = if mixing { self.targets.get(i).to_vec() } else { self.observed_label(i).to_vec() };
        let mut x_mixed: Vec<f64> = self.data.row(i).iter().map(|v| w.lambda * v).collect();
        let mut neighbor_labels = Vec::with_capacity(nbrs.len() * c);
        for (&j, &beta) in nbrs.iter().zip(&w.betas) {
            for (x, &xj) in x_mixed.iter_mut().zip(self.data.row(j)) {
                *x += beta * xj;
            }
            if self.config.neighbors_use_soft_targets {
                neighbor_labels.extend_from_slice(self.targets.get(j));
            } else {
                neighbor_labels.extend_from_slice(self.observed_label(j));
            }
        }
        MixedExample { x_mixed, lambda: w.lambda, target, betas: w.betas.clone(), neighbor_labels }
    }

    /// K partners for every sample: HNSW neighbours in embedding space from
    /// the epoch-start model, or uniform draws for the random ablation.
    fn resolve_neighbors(&mut self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let n = self.data.len();
        let k = self.config.k;
        if self.config.mode == Mode::MixNNRandomNeighbors {
            return Ok((0..n)
                .map(|i| {
                    (0..k)
                        .map(|_| loop {
                            let j = self.ablation_rng.random_range(0..n);
                            if j != i || !self.config.exclude_self {
                                break j;
                            }
                        })
                        .collect()
                })
                .collect());
        }
        let emb = diagnostics::embeddings(&self.model, self.data.features)?;
        if !emb.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        let e = self.model.embedding_dim();
        let params = HnswParams { seed: derive_seed(derive_seed(self.config.seed, stream::INDEX), epoch as u64), ..self.config.hnsw };
        let index = HnswIndex::build(&emb, e, params)?;
        let mut scratch = SearchScratch::default();
        let ef = params.ef_search.max(k + 1);
        (0..n)
            .map(|i| {
                let exclude = self.config.exclude_self.then_some(i);
                let (set, _) = index.search_with(&emb[i * e..(i + 1) * e], k, ef, exclude, &mut scratch)?;
                Ok(set.ids().collect())
            })
            .collect()
    }
}

/// GMM parameters as logged per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTrace {
    pub pi: [f64; 2],
    pub mu: [f64; 2],
    pub var: [f64; 2],
    pub iterations: usize,
    pub degenerate: bool,
    pub log_likelihood: f64,
}

impl From<&GmmFit> for GmmTrace {
    fn from(fit: &GmmFit) -> Self {
        Self {
            pi: fit.gmm.pi,
            mu: fit.gmm.mu,
            var: fit.gmm.var,
            iterations: fit.iterations,
            degenerate: fit.degenerate,
            log_likelihood: fit.log_likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    /// Agreement of predictions with the observed (noisy) training labels.
    pub train_accuracy: f64,
    /// Agreement of predictions on the training inputs with their clean labels.
    pub train_clean_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub grad_coef_clean: Option<f64>,
    pub grad_coef_noisy: Option<f64>,
    pub gmm: GmmTrace,
    /// AUC of the clean posterior as a clean-vs-mislabeled detector.
    pub posterior_auc: Option<f64>,
    pub correction_accuracy: f64,
    /// `C x C`, row = clean class, column = argmax of the soft target.
    pub confusion: Vec<u64>,
    pub loss_hist_clean: Vec<u64>,
    pub loss_hist_noisy: Vec<u64>,
    pub weight_fallbacks: usize,
    pub corrected: bool,
    pub wallclock_secs: f64,
}

/// Clean-label view of a finished epoch. `model` and `targets` are the
/// end-of-epoch state; loss histograms and the mixture come from the
/// epoch-start profile in `report`.
pub fn epoch_metrics(
    report: &EpochReport,
    model: &MlpModel,
    targets: &SoftTargets,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    wallclock_secs: f64,
) -> Result<EpochMetrics> {
    let mislabeled = train.mislabeled_mask();
    let clean_mask: Vec<bool> = mislabeled.iter().map(|m| !m).collect();
    let preds = diagnostics::predict(model, train.features())?;
    let test_accuracy = test.map(|t| diagnostics::evaluate(model, t)).transpose()?;
    let norm = &report.profile.normalized;
    Ok(EpochMetrics {
        epoch: report.epoch,
        phase: report.phase,
        lr: report.final_lr,
        train_loss: report.mean_loss,
        train_accuracy: diagnostics::accuracy(&preds, train.noisy_labels()),
        train_clean_accuracy: diagnostics::accuracy(&preds, train.clean_labels()),
        test_accuracy,
        grad_coef_clean: group_mean(&report.grad_coefficient, &mislabeled, false),
        grad_coef_noisy: group_mean(&report.grad_coefficient, &mislabeled, true),
        gmm: GmmTrace::from(&report.gmm),
        posterior_auc: auc(&report.posteriors, &clean_mask),
        correction_accuracy: correction_accuracy(targets, train.clean_labels())?,
        confusion: confusion_matrix(targets, train.clean_labels())?,
        loss_hist_clean: histogram(norm.iter().zip(&mislabeled).filter(|(_, &m)| !m).map(|(&l, _)| l)),
        loss_hist_noisy: histogram(norm.iter().zip(&mislabeled).filter(|(_, &m)| m).map(|(&l, _)| l)),
        weight_fallbacks: report.weight_fallbacks,
        corrected: report.corrected,
        wallclock_secs,
    })
}

/// Source of elapsed seconds for the metrics log.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Reports zero elapsed time; for runs that must be bit-reproducible.
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: MlpModel,
    pub targets: SoftTargets,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains from scratch for `config.epochs` epochs, calling `observe` after
/// each epoch.
pub fn run(
    config: &TrainConfig,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    clock: &dyn Clock,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<RunResult> {
    let mut trainer = Trainer::new(config.clone(), train.train_view())?;
    let start = clock.seconds();
    let mut metrics = Vec::with_capacity(config.epochs);
    while !trainer.is_finished() {
        let report = trainer.train_epoch()?;
        let m = epoch_metrics(&report, trainer.model(), trainer.targets(), train, test, clock.seconds() - start)?;
        observe(&m);
        metrics.push(m);
    }
    let targets = trainer.targets().clone();
    Ok(RunResult { model: trainer.into_model(), targets, metrics })
}

/// Summary line for a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub epochs: usize,
    pub final_train_accuracy: f64,
    pub final_train_clean_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub best_test_accuracy: Option<f64>,
    pub final_correction_accuracy: f64,
    pub best_correction_accuracy: f64,
    pub initial_label_accuracy: f64,
    pub note: Option<String>,
}

impl RunSummary {
    pub fn from_metrics(mode: Mode, metrics: &[EpochMetrics], initial_label_accuracy: f64) -> Option<Self> {
        let last = metrics.last()?;
        let best_test = metrics.iter().filter_map(|m| m.test_accuracy).fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
        Some(Self {
            mode,
            epochs: metrics.len(),
            final_train_accuracy: last.train_accuracy,
            final_train_clean_accuracy: last.train_clean_accuracy,
            final_test_accuracy: last.test_accuracy,
            best_test_accuracy: best_test,
            final_correction_accuracy: last.correction_accuracy,
            best_correction_accuracy: metrics.iter().map(|m| m.correction_accuracy).fold(0.0, f64::max),
            initial_label_accuracy,
            note: None,
        })
    }
}
