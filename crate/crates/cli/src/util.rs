//! Shared command plumbing.

use egomotion::data::{load_idx, Digits};
use egomotion::Error;
use std::path::{Path, PathBuf};

/// Resolves the four canonical dataset files inside a directory, preferring
/// gzipped names when both exist.
fn dataset_file(dir: &Path, base: &str) -> anyhow::Result<PathBuf> {
    let gz = dir.join(format!("{base}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    let raw = dir.join(base);
    if raw.exists() {
        return Ok(raw);
    }
    Err(Error::Config(format!(
        "missing dataset file {base}[.gz] in {}",
        dir.display()
    ))
    .into())
}

pub fn load_mnist_split(dir: &Path, split: &str) -> anyhow::Result<Digits> {
    let (images, labels) = match split {
        "train" => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test" => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        other => {
            return Err(Error::Config(format!("unknown split `{other}` (train|test)")).into())
        }
    };
    Ok(load_idx(
        &dataset_file(dir, images)?,
        &dataset_file(dir, labels)?,
    )?)
}

/// Worker-count override from the environment.
pub fn env_workers(default: usize) -> usize {
    std::env::var("EGO_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

/// Output-directory override from the environment.
pub fn env_out(cli_value: Option<PathBuf>, command: &str) -> PathBuf {
    cli_value
        .or_else(|| std::env::var("EGO_OUT").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}
