//! Dataset files, model checkpoints and file hashing.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use mixnn_core::data::LabeledDataset;
use mixnn_core::network::MlpModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Writes `dataset` as CSV. The first line is a comment carrying the shape,
/// `# dim=<d>,n_classes=<c>`; every following line is `d` features, the clean
/// label and the observed label. Features are written with 17 significant
/// digits so a reload reproduces them bit for bit.
pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "# dim={},n_classes={}", dataset.dim(), dataset.n_classes())?;
        for i in 0..dataset.len() {
            for v in dataset.row(i) {
                write!(w, "{v:.16e},")?;
            }
            writeln!(w, "{},{}", dataset.clean_labels()[i], dataset.noisy_labels()[i])?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| CliError::io(path, e))
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let body = line.strip_prefix('#')?.trim();
    let (mut dim, mut classes) = (None, None);
    for part in body.split(',') {
        let (k, v) = part.split_once('=')?;
        match k.trim() {
            "dim" => dim = v.trim().parse().ok(),
            "n_classes" => classes = v.trim().parse().ok(),
            _ => return None,
        }
    }
    Some((dim?, classes?))
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| CliError::io(path, e))?,
        None => return Err(CliError::format(path, "empty file")),
    };
    let (dim, n_classes) =
        parse_header(&header).ok_or_else(|| CliError::format(path, "first line must be `# dim=<d>,n_classes=<c>`"))?;
    let (mut features, mut clean, mut noisy) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = n + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(CliError::format(path, format!("line {lineno}: expected {} fields, found {}", dim + 2, fields.len())));
        }
        for f in &fields[..dim] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| CliError::format(path, format!("line {lineno}: bad feature `{f}`")))?;
            features.push(v);
        }
        let label = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| CliError::format(path, format!("line {lineno}: bad label `{s}`")))
        };
        clean.push(label(fields[dim])?);
        noisy.push(label(fields[dim + 1])?);
    }
    LabeledDataset::new(features, dim, n_classes, clean, noisy).map_err(|e| CliError::format(path, e.to_string()))
}

pub const CHECKPOINT_FORMAT: &str = "mixnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: MlpModel,
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: model.clone() };
    write_json(path, &ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(CliError::format(path, format!("not a checkpoint (format `{}`)", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CliError::format(path, format!("unsupported checkpoint version {}", ckpt.version)));
    }
    // Re-run the shape and finiteness checks on the loaded parameters.
    MlpModel::from_layers(ckpt.model.layers().to_vec()).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::format(path, e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
