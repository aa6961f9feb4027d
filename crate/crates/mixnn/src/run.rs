//! The `train` command: a full run plus its metrics log, summary, checkpoint
//! and manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mixnn_core::trainer::{run, Clock, EpochMetrics, RunSummary, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{CliError, Result};
use crate::io::{create_dir, load_dataset, read_json, save_checkpoint, sha256_file, write_json};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    #[serde(flatten)]
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub k: usize,
    pub seed: u64,
    pub correction_start: usize,
    pub train_samples: usize,
    pub test_samples: Option<usize>,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub config: BTreeMap<String, String>,
    pub train_data: DatasetRef,
    pub test_data: Option<DatasetRef>,
    pub artifacts: Artifacts,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    /// The run's configuration rebuilt from the echoed settings.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        for (k, v) in &self.config {
            config::set(&mut c, k, v)?;
        }
        Ok(c)
    }
}

pub fn config_map(c: &TrainConfig) -> BTreeMap<String, String> {
    config::pairs(c).into_iter().collect()
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub struct TrainRequest<'a> {
    pub train: &'a Path,
    pub test: Option<&'a Path>,
    pub out: &'a Path,
    pub config: TrainConfig,
    /// Record zero wall-clock time so that repeated runs write identical logs.
    pub deterministic_clock: bool,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn dataset_ref(path: &Path) -> Result<DatasetRef> {
    Ok(DatasetRef { path: absolute(path), sha256: sha256_file(path)? })
}

pub fn train(req: TrainRequest<'_>) -> Result<SummaryFile> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let train = load_dataset(req.train)?;
    let test = req.test.map(load_dataset).transpose()?;
    create_dir(req.out)?;
    let cfg = req.config;
    let config_path = req.out.join(CONFIG_FILE);
    std::fs::write(&config_path, config::render(&cfg)).map_err(|e| CliError::io(&config_path, e))?;

    let metrics_path = req.out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);
    let mut write_err = None;
    let wall = WallClock(Instant::now());
    let zero = mixnn_core::trainer::NoClock;
    let clock: &dyn Clock = if req.deterministic_clock { &zero } else { &wall };
    log::info!(
        "training {} on {} samples for {} epochs (seed {})",
        cfg.mode,
        train.len(),
        cfg.epochs,
        cfg.seed
    );
    let result = run(&cfg, &train, test.as_ref(), clock, |m| {
        log::info!(
            "epoch {:>3} {:?} loss {:.4} train {:.3} test {} correction {:.3}",
            m.epoch,
            m.phase,
            m.train_loss,
            m.train_accuracy,
            m.test_accuracy.map_or("-".to_string(), |a| format!("{a:.3}")),
            m.correction_accuracy
        );
        if write_err.is_none() {
            let record = MetricsRecord { schema_version: METRICS_SCHEMA_VERSION, metrics: m.clone() };
            let line = serde_json::to_string(&record).expect("metrics serialise");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(CliError::io(&metrics_path, e));
    }
    let result = result?;
    log.flush().map_err(|e| CliError::io(&metrics_path, e))?;

    let checkpoint_path = req.out.join(CHECKPOINT_FILE);
    save_checkpoint(&result.model, &checkpoint_path)?;
    let summary = RunSummary::from_metrics(cfg.mode, &result.metrics, train.label_accuracy())
        .ok_or_else(|| CliError::Config("run produced no epochs".into()))?;
    let summary = SummaryFile {
        schema_version: SUMMARY_SCHEMA_VERSION,
        summary,
        k: cfg.k,
        seed: cfg.seed,
        correction_start: cfg.correction_start(),
        train_samples: train.len(),
        test_samples: test.as_ref().map(|t| t.len()),
        config: config_map(&cfg),
    };
    let summary_path = req.out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config_map(&cfg),
        train_data: dataset_ref(req.train)?,
        test_data: req.test.map(dataset_ref).transpose()?,
        artifacts: Artifacts {
            config: absolute(&config_path),
            checkpoint: absolute(&checkpoint_path),
            metrics: absolute(&metrics_path),
            summary: absolute(&summary_path),
        },
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    write_json(&req.out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord =
            serde_json::from_str(&line).map_err(|e| CliError::format(path, format!("line {}: {e}", n + 1)))?;
        if record.schema_version != METRICS_SCHEMA_VERSION {
            return Err(CliError::format(path, format!("unsupported metrics schema {}", record.schema_version)));
        }
        out.push(record.metrics);
    }
    Ok(out)
}

pub fn read_summary(run_dir: &Path) -> Result<SummaryFile> {
    read_json(&run_dir.join(SUMMARY_FILE))
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    read_json(&run_dir.join(MANIFEST_FILE))
}
