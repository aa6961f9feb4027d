use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixnn::io::{load_dataset, sha256_file};
use mixnn::run::{read_manifest, read_metrics, read_summary, METRICS_FILE};
use mixnn_core::diagnostics::HISTOGRAM_BINS;
use tempfile::TempDir;

fn mixnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixnn")).args(args).env("MIXNN_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mixnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small noisy dataset pair.
fn small_data(dir: &Path) -> (PathBuf, PathBuf) {
    let clean = dir.join("clean.csv");
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    ok(&["gen-data", "--classes", "3", "--per-class", "40", "--dim", "6", "--spread", "0.3", "--seed", "1", "--out", p(&clean)]);
    ok(&["inject", "--input", p(&clean), "--out", p(&train), "--epsilon", "0.3", "--seed", "2"]);
    ok(&["gen-data", "--classes", "3", "--per-class", "10", "--dim", "6", "--spread", "0.3", "--seed", "3", "--out", p(&test)]);
    (train, test)
}

fn small_train(train: &Path, test: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--train", p(train), "--test", p(test), "--out", p(out), "--epochs", "6", "--no-wallclock",
        "--set", "warmup_epochs=2", "--set", "hidden=12,6", "--set", "batch_size=16",
    ];
    args.extend_from_slice(extra);
    mixnn(&args)
}

#[test]
fn gen_data_is_reproducible_and_valid() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for path in [&a, &b] {
        ok(&["gen-data", "--classes", "8", "--per-class", "50", "--dim", "32", "--seed", "1", "--out", p(path)]);
    }
    assert_eq!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.n_classes()), (400, 32, 8));
    assert!(fs::read_to_string(&a).unwrap().starts_with("# dim=32,n_classes=8\n"));
}

#[test]
fn inject_behaviour() {
    let dir = TempDir::new().unwrap();
    let clean = dir.path().join("clean.csv");
    ok(&["gen-data", "--classes", "4", "--per-class", "30", "--dim", "3", "--out", p(&clean)]);

    let same = dir.path().join("same.csv");
    ok(&["inject", "--input", p(&clean), "--out", p(&same), "--epsilon", "0"]);
    let ds = load_dataset(&same).unwrap();
    assert_eq!(ds.noisy_labels(), ds.clean_labels());

    let asym = dir.path().join("asym.csv");
    ok(&["inject", "--input", p(&clean), "--out", p(&asym), "--noise", "asymm", "--epsilon", "1", "--pairs", "0:1,2:3"]);
    let ds = load_dataset(&asym).unwrap();
    for (&c, &n) in ds.clean_labels().iter().zip(ds.noisy_labels()) {
        assert_eq!(n, [1, 1, 3, 3][c]);
    }

    for bad in ["0-1", "0:9", "1:1", "a:b"] {
        let out = mixnn(&["inject", "--input", p(&clean), "--out", p(&asym), "--noise", "asymm", "--epsilon", "0.2", "--pairs", bad]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn symmetric_flip_rate_on_a_large_file() {
    let dir = TempDir::new().unwrap();
    let (clean, noisy) = (dir.path().join("c.csv"), dir.path().join("n.csv"));
    ok(&["gen-data", "--classes", "10", "--per-class", "5000", "--dim", "2", "--out", p(&clean)]);
    ok(&["inject", "--input", p(&clean), "--out", p(&noisy), "--epsilon", "0.4", "--seed", "7"]);
    let flip = 1.0 - load_dataset(&noisy).unwrap().label_accuracy();
    assert!((flip - 0.4).abs() <= 0.01, "{flip}");
}

#[test]
fn training_writes_consistent_artifacts() {
    let dir = TempDir::new().unwrap();
    let (train, test) = small_data(dir.path());
    let run = dir.path().join("run");
    let out = small_train(&train, &test, &run, &["--mode", "mixnn"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = read_manifest(&run).unwrap();
    for path in [&manifest.artifacts.checkpoint, &manifest.artifacts.metrics, &manifest.artifacts.summary, &manifest.artifacts.config] {
        assert!(path.exists(), "{}", path.display());
    }
    assert_eq!(manifest.train_data.sha256, sha256_file(&train).unwrap());
    let cfg = manifest.train_config().unwrap();
    assert_eq!(cfg.hidden, vec![12, 6]);
    assert_eq!(mixnn::run::config_map(&cfg), manifest.config);

    let metrics = read_metrics(&run.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.len(), 6);
    let summary = read_summary(&run).unwrap();
    assert_eq!(summary.summary.final_train_accuracy, metrics[5].train_accuracy);

    let eval = ok(&["eval", "--checkpoint", p(&manifest.artifacts.checkpoint), "--data", p(&test)]);
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(v["clean_accuracy"].as_f64(), metrics[5].test_accuracy);
}

#[test]
fn seeded_runs_repeat_exactly() {
    let dir = TempDir::new().unwrap();
    let (train, test) = small_data(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        assert!(small_train(&train, &test, run, &["--seed", "4"]).status.success());
    }
    for file in ["summary.json", "metrics.jsonl", "checkpoint.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn config_file_and_precedence() {
    let dir = TempDir::new().unwrap();
    let (train, test) = small_data(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "mode = ce\nk = 3\n").unwrap();
    let run = dir.path().join("run");
    assert!(small_train(&train, &test, &run, &["--config", p(&cfg), "--k", "2"]).status.success());
    let s = read_summary(&run).unwrap();
    assert_eq!((s.summary.mode.as_str(), s.k), ("ce", 2));

    fs::write(&cfg, "mode = ce\nalpha =\n").unwrap();
    let out = small_train(&train, &test, &dir.path().join("bad"), &["--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`alpha`"));

    fs::write(&cfg, "modee = ce\n").unwrap();
    let out = small_train(&train, &test, &dir.path().join("bad"), &["--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    let printed = ok(&["print-config", "--set", "k=5"]);
    assert!(printed.contains("k = 5\n"));
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let (train, test) = small_data(dir.path());
    let out = small_train(&train, &test, &dir.path().join("run"), &["--set", "lr_max=1e300", "--set", "lr_min=1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = mixnn(&["eval", "--checkpoint", p(&dir.path().join("none.json")), "--data", p(&dir.path().join("none.csv"))]);
    assert_eq!(out.status.code(), Some(4));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn report_files_match_the_run() {
    let dir = TempDir::new().unwrap();
    let (train, test) = small_data(dir.path());
    let (ce, mix) = (dir.path().join("ce"), dir.path().join("mix"));
    assert!(small_train(&train, &test, &ce, &["--mode", "ce"]).status.success());
    assert!(small_train(&train, &test, &mix, &["--mode", "mixnn", "--k", "2"]).status.success());
    let out = dir.path().join("report");
    ok(&["report", "--run", p(&ce), "--run", p(&mix), "--out", p(&out)]);

    let n = load_dataset(&train).unwrap().len();
    let metrics = read_metrics(&mix.join(METRICS_FILE)).unwrap();
    let per_run = out.join("mix");
    assert_eq!(read_csv(&per_run.join("accuracy.csv")).1.len(), metrics.len());
    assert_eq!(read_csv(&per_run.join("grad_coefficients.csv")).1.len(), metrics.len());

    let (_, hist) = read_csv(&per_run.join("loss_histograms.csv"));
    assert_eq!(hist.len(), metrics.len() * HISTOGRAM_BINS);
    for epoch in 0..metrics.len() {
        let total: u64 = hist
            .iter()
            .filter(|r| r[0] == epoch.to_string())
            .map(|r| r[4].parse::<u64>().unwrap() + r[5].parse::<u64>().unwrap())
            .sum();
        assert_eq!(total as usize, n);
    }

    let (_, gmm) = read_csv(&per_run.join("gmm.csv"));
    for (row, m) in gmm.iter().zip(&metrics) {
        let vals: Vec<f64> = row[1..7].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![m.gmm.pi[0], m.gmm.pi[1], m.gmm.mu[0], m.gmm.mu[1], m.gmm.var[0], m.gmm.var[1]]);
    }

    let (_, confusion) = read_csv(&per_run.join("confusion.csv"));
    assert_eq!(confusion.len(), metrics.len() * 9);
    let (header, emb) = read_csv(&per_run.join("embeddings.csv"));
    assert_eq!(emb.len(), n);
    assert_eq!(header.len(), 4 + 6);

    assert_eq!(read_csv(&out.join("runs.csv")).1.len(), 2);
    let (_, sweep) = read_csv(&out.join("k_sweep.csv"));
    assert_eq!(sweep.len(), 2);
}

#[test]
fn knn_bench_reports_every_setting() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("bench.csv");
    ok(&["knn-bench", "--n", "400", "--dim", "8", "--queries", "30", "--ef-search", "8,400", "--out", p(&table)]);
    let (header, rows) = read_csv(&table);
    assert_eq!(header.len(), 9);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "exact");
    assert_eq!(rows[2][5], "1");
}
