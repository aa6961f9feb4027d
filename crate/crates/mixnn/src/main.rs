use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mixnn_core::data::{asymmetric_matrix, inject_noise, make_blobs, symmetric_matrix};
use mixnn_core::diagnostics::{accuracy, predict};
use mixnn_core::knn::HnswParams;
use mixnn::bench::{knn_bench, BenchRequest, CSV_HEADER};
use mixnn::error::{CliError, Result};
use mixnn::io::{load_checkpoint, load_dataset, save_dataset};
use mixnn::run::{train, TrainRequest};
use mixnn::{config, report};

/// Environment variable holding the log filter, e.g. `MIXNN_LOG=debug`.
const LOG_ENV: &str = "MIXNN_LOG";

#[derive(Parser)]
#[command(name = "mixnn", version, about = "Noisy-label training with nearest-neighbour mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Symm,
    Asymm,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset with clean labels.
    GenData {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 1250)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.35)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Redraw observed labels through a transition matrix.
    Inject {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "symm")]
        noise: NoiseKind,
        #[arg(long)]
        epsilon: f64,
        /// Class pairs for asymmetric noise, `src:dst,src:dst,...`.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write its checkpoint, metrics, summary and manifest.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Any config key, `key=value`; may be repeated.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Log zero elapsed time so repeated runs produce identical metrics files.
        #[arg(long)]
        no_wallclock: bool,
    },
    /// Accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Plot-ready CSV files for one or more finished runs.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall and latency of the graph index against exhaustive search.
    KnnBench {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        ef_construction: usize,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        ef_search: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective config in config-file form.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|p| {
            let bad = || CliError::Config(format!("bad class pair `{p}`, expected `src:dst`"));
            let (a, b) = p.split_once(':').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter().map(|s| config::parse_override(s)).collect()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { classes, per_class, dim, spread, seed, out } => {
            let ds = make_blobs(classes, per_class, dim, spread, seed)?;
            save_dataset(&ds, &out)?;
            log::info!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Inject { input, out, noise, epsilon, pairs, seed } => {
            let ds = load_dataset(&input)?;
            let q = match noise {
                NoiseKind::Symm => {
                    if pairs.is_some() {
                        return Err(CliError::Config("--pairs applies only to --noise asymm".into()));
                    }
                    symmetric_matrix(ds.n_classes(), epsilon)?
                }
                NoiseKind::Asymm => {
                    let list = pairs.ok_or_else(|| CliError::Config("--noise asymm needs --pairs".into()))?;
                    asymmetric_matrix(ds.n_classes(), epsilon, &parse_pairs(&list)?)?
                }
            };
            let noisy = inject_noise(&ds, &q, seed)?;
            save_dataset(&noisy, &out)?;
            println!("flip_rate {}", 1.0 - noisy.label_accuracy());
        }
        Command::Train { train: train_path, test, out, config: file, mode, seed, epochs, k, set, no_wallclock } => {
            let mut ov = Vec::new();
            if let Some(m) = mode {
                ov.push(("mode".to_string(), m));
            }
            if let Some(s) = seed {
                ov.push(("seed".to_string(), s.to_string()));
            }
            if let Some(e) = epochs {
                ov.push(("epochs".to_string(), e.to_string()));
            }
            if let Some(k) = k {
                ov.push(("k".to_string(), k.to_string()));
            }
            // Explicit flags take precedence over --set.
            let mut all = overrides(&set)?;
            all.extend(ov);
            let cfg = config::load(file.as_deref(), &all)?;
            let summary = train(TrainRequest {
                train: &train_path,
                test: test.as_deref(),
                out: &out,
                config: cfg,
                deterministic_clock: no_wallclock,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary.summary).expect("summary serialises"));
        }
        Command::Eval { checkpoint, data } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let preds = predict(&model, ds.features())?;
            let out = serde_json::json!({
                "samples": ds.len(),
                "clean_accuracy": accuracy(&preds, ds.clean_labels()),
                "observed_label_accuracy": accuracy(&preds, ds.noisy_labels()),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Report { runs, out } => {
            for path in report::report(&runs, &out)? {
                println!("{}", path.display());
            }
        }
        Command::KnnBench { n, dim, k, queries, m, ef_construction, ef_search, seed, out } => {
            let params = HnswParams { m, ef_construction, ef_search: ef_search.iter().copied().max().unwrap_or(64), seed };
            params.validate()?;
            let rows = knn_bench(&BenchRequest { n, dim, k, queries, params, ef_search, seed })?;
            let mut text = format!("{CSV_HEADER}\n");
            for r in &rows {
                text.push_str(&r.csv());
                text.push('\n');
            }
            match out {
                Some(path) => write_out(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::PrintConfig { config: file, set } => {
            print!("{}", config::render(&config::load(file.as_deref(), &overrides(&set)?)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
