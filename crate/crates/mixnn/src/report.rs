//! The `report` command: tidy CSV files for plotting, one per figure family.
//!
//! Per run (in `<out>/<run name>/`): `accuracy.csv`, `grad_coefficients.csv`,
//! `loss_histograms.csv`, `gmm.csv`, `confusion.csv` and `embeddings.csv`.
//! Across runs (in `<out>/`): `runs.csv` and `k_sweep.csv`. Column meanings are
//! listed in `docs/metrics.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mixnn_core::diagnostics::{embeddings, HISTOGRAM_BINS};
use mixnn_core::trainer::{EpochMetrics, Phase};

use crate::error::{CliError, Result};
use crate::io::{create_dir, load_checkpoint, load_dataset};
use crate::run::{read_manifest, read_metrics, read_summary, SummaryFile, CHECKPOINT_FILE, METRICS_FILE};

struct Csv {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut csv = Self { path, w: BufWriter::new(file) };
        csv.row(header)?;
        Ok(csv)
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.w, "{line}").map_err(|e| CliError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
}

fn accuracy_csv(dir: &Path, metrics: &[EpochMetrics]) -> Result<PathBuf> {
    let mut csv = Csv::create(
        dir.join("accuracy.csv"),
        "epoch,phase,lr,train_loss,train_accuracy,train_clean_accuracy,test_accuracy,correction_accuracy,posterior_auc,weight_fallbacks,corrected",
    )?;
    for m in metrics {
        csv.row(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.epoch,
            match m.phase {
                Phase::Warmup => "warmup",
                Phase::Train => "train",
            },
            m.lr,
            m.train_loss,
            m.train_accuracy,
            m.train_clean_accuracy,
            opt(m.test_accuracy),
            m.correction_accuracy,
            opt(m.posterior_auc),
            m.weight_fallbacks,
            m.corrected
        ))?;
    }
    csv.finish()
}

fn grad_csv(dir: &Path, metrics: &[EpochMetrics]) -> Result<PathBuf> {
    let mut csv = Csv::create(dir.join("grad_coefficients.csv"), "epoch,clean,mislabeled")?;
    for m in metrics {
        csv.row(&format!("{},{},{}", m.epoch, opt(m.grad_coef_clean), opt(m.grad_coef_noisy)))?;
    }
    csv.finish()
}

fn histogram_csv(dir: &Path, metrics: &[EpochMetrics]) -> Result<PathBuf> {
    let mut csv = Csv::create(dir.join("loss_histograms.csv"), "epoch,bin,bin_low,bin_high,clean,mislabeled")?;
    let width = 1.0 / HISTOGRAM_BINS as f64;
    for m in metrics {
        for (b, (c, n)) in m.loss_hist_clean.iter().zip(&m.loss_hist_noisy).enumerate() {
            csv.row(&format!("{},{b},{},{},{c},{n}", m.epoch, b as f64 * width, (b + 1) as f64 * width))?;
        }
    }
    csv.finish()
}

fn gmm_csv(dir: &Path, metrics: &[EpochMetrics]) -> Result<PathBuf> {
    let mut csv = Csv::create(
        dir.join("gmm.csv"),
        "epoch,pi_clean,pi_mislabeled,mu_clean,mu_mislabeled,var_clean,var_mislabeled,iterations,degenerate,log_likelihood",
    )?;
    for m in metrics {
        let g = &m.gmm;
        csv.row(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            m.epoch, g.pi[0], g.pi[1], g.mu[0], g.mu[1], g.var[0], g.var[1], g.iterations, g.degenerate, g.log_likelihood
        ))?;
    }
    csv.finish()
}

fn confusion_csv(dir: &Path, metrics: &[EpochMetrics]) -> Result<PathBuf> {
    let mut csv = Csv::create(dir.join("confusion.csv"), "epoch,clean_label,corrected_label,count")?;
    for m in metrics {
        let c = (m.confusion.len() as f64).sqrt() as usize;
        for (idx, count) in m.confusion.iter().enumerate() {
            csv.row(&format!("{},{},{},{count}", m.epoch, idx / c, idx % c))?;
        }
    }
    csv.finish()
}

fn embeddings_csv(dir: &Path, run_dir: &Path) -> Result<PathBuf> {
    let manifest = read_manifest(run_dir)?;
    let model = load_checkpoint(&run_dir.join(CHECKPOINT_FILE))?;
    let data = load_dataset(&manifest.train_data.path)?;
    let emb = embeddings(&model, data.features())?;
    let e = model.embedding_dim();
    let header: Vec<String> = ["id", "clean_label", "noisy_label", "mislabeled"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..e).map(|j| format!("e{j}")))
        .collect();
    let mut csv = Csv::create(dir.join("embeddings.csv"), &header.join(","))?;
    let mislabeled = data.mislabeled_mask();
    for (i, row) in emb.chunks_exact(e).enumerate() {
        let values: Vec<String> = row.iter().map(f64::to_string).collect();
        csv.row(&format!(
            "{i},{},{},{},{}",
            data.clean_labels()[i],
            data.noisy_labels()[i],
            mislabeled[i],
            values.join(",")
        ))?;
    }
    csv.finish()
}

/// Writes every per-run file for `run_dir` into `out/<run name>/`.
pub fn report_run(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let metrics = read_metrics(&run_dir.join(METRICS_FILE))?;
    let dir = out.join(run_name(run_dir));
    create_dir(&dir)?;
    Ok(vec![
        accuracy_csv(&dir, &metrics)?,
        grad_csv(&dir, &metrics)?,
        histogram_csv(&dir, &metrics)?,
        gmm_csv(&dir, &metrics)?,
        confusion_csv(&dir, &metrics)?,
        embeddings_csv(&dir, run_dir)?,
    ])
}

fn summary_row(name: &str, s: &SummaryFile) -> String {
    format!(
        "{name},{},{},{},{},{},{},{},{},{}",
        s.summary.mode,
        s.k,
        s.seed,
        s.summary.epochs,
        s.summary.final_train_accuracy,
        opt(s.summary.final_test_accuracy),
        opt(s.summary.best_test_accuracy),
        s.summary.final_correction_accuracy,
        s.summary.initial_label_accuracy
    )
}

const SUMMARY_HEADER: &str = "run,mode,k,seed,epochs,final_train_accuracy,final_test_accuracy,best_test_accuracy,final_correction_accuracy,initial_label_accuracy";

/// Per-run files for every run plus the cross-run tables.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let mut written = Vec::new();
    let mut summaries = Vec::new();
    for run_dir in runs {
        written.extend(report_run(run_dir, out)?);
        summaries.push((run_name(run_dir), read_summary(run_dir)?));
    }
    let mut csv = Csv::create(out.join("runs.csv"), SUMMARY_HEADER)?;
    for (name, s) in &summaries {
        csv.row(&summary_row(name, s))?;
    }
    written.push(csv.finish()?);

    // Mean over seeds for each (mode, K).
    summaries.sort_by(|a, b| (a.1.summary.mode.as_str(), a.1.k).cmp(&(b.1.summary.mode.as_str(), b.1.k)));
    let mut csv = Csv::create(
        out.join("k_sweep.csv"),
        "mode,k,runs,mean_final_test_accuracy,mean_best_test_accuracy,mean_final_correction_accuracy",
    )?;
    for group in summaries.chunk_by(|a, b| a.1.summary.mode == b.1.summary.mode && a.1.k == b.1.k) {
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&SummaryFile) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = group.iter().map(|(_, s)| f(s)).collect();
            vals.map(|v| v.iter().sum::<f64>() / n)
        };
        let s0 = &group[0].1;
        csv.row(&format!(
            "{},{},{},{},{},{}",
            s0.summary.mode,
            s0.k,
            group.len(),
            opt(mean(&|s| s.summary.final_test_accuracy)),
            opt(mean(&|s| s.summary.best_test_accuracy)),
            opt(mean(&|s| Some(s.summary.final_correction_accuracy)))
        ))?;
    }
    written.push(csv.finish()?);
    Ok(written)
}
