//! `synth-data`: generate a transformed-pair dataset as a record stream plus
//! its JSON sidecar.

use crate::config::{config_hash, save_config, SynthConfig};
use crate::manifest::{guard_outputs, RunManifest};
use crate::util::load_mnist_split;
use egomotion::data::{write_pair_records, PairRecord, PairStream};
use std::path::Path;
use std::time::Instant;

pub fn run(cfg: &SynthConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    guard_outputs(
        out,
        &["pairs.bin", "pairs.bin.json", "config.json", "manifest.json"],
        overwrite,
    )?;
    let t0 = Instant::now();
    let digits = load_mnist_split(&cfg.mnist_dir, &cfg.split)?;
    let stream = PairStream::new(&digits, cfg.seed, cfg.count);
    let pairs_path = out.join("pairs.bin");
    let sidecar = write_pair_records(
        &pairs_path,
        cfg.mode,
        cfg.seed,
        stream.map(PairRecord::from),
    )?;
    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    let manifest = RunManifest::collect(
        "synth-data",
        config_hash(cfg),
        vec![cfg.seed],
        t0.elapsed().as_secs_f64(),
        out,
        &[
            pairs_path.clone(),
            egomotion::data::sidecar_path(&pairs_path),
            config_path,
        ],
    )?;
    manifest.write(out)?;
    println!(
        "wrote {} pairs ({:?} mode) to {}",
        sidecar.count,
        cfg.mode,
        pairs_path.display()
    );
    Ok(())
}
