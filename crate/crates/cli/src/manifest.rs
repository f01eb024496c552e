//! Run manifests: every command records its config hash, seeds, wall time,
//! and a checksum for each artifact it wrote.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub crc32: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub wall_seconds: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn file_crc32(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes);
    Ok(format!("{:08x}", h.finalize()))
}

impl RunManifest {
    pub fn collect(
        command: &str,
        config_hash: String,
        seeds: Vec<u64>,
        wall_seconds: f64,
        out_dir: &Path,
        artifacts: &[PathBuf],
    ) -> anyhow::Result<Self> {
        let mut entries = Vec::with_capacity(artifacts.len());
        for a in artifacts {
            let meta = std::fs::metadata(a)?;
            entries.push(ArtifactEntry {
                path: a
                    .strip_prefix(out_dir)
                    .unwrap_or(a)
                    .to_string_lossy()
                    .into_owned(),
                bytes: meta.len(),
                crc32: file_crc32(a)?,
            });
        }
        Ok(RunManifest {
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            wall_seconds,
            artifacts: entries,
        })
    }

    pub fn write(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    /// Re-checksums every listed artifact and returns the mismatches.
    pub fn validate(&self, out_dir: &Path) -> anyhow::Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let path = out_dir.join(&a.path);
            if !path.exists() {
                bad.push(format!("{}: missing", a.path));
                continue;
            }
            let crc = file_crc32(&path)?;
            if crc != a.crc32 {
                bad.push(format!("{}: crc {} != recorded {}", a.path, crc, a.crc32));
            }
        }
        Ok(bad)
    }
}

/// Refuses to clobber prior outputs unless overwriting was requested.
pub fn guard_outputs(out_dir: &Path, outputs: &[&str], overwrite: bool) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    if overwrite {
        return Ok(());
    }
    for name in outputs {
        let p = out_dir.join(name);
        if p.exists() {
            anyhow::bail!(
                "configuration error: output {} already exists (pass --overwrite to replace it)",
                p.display()
            );
        }
    }
    Ok(())
}
