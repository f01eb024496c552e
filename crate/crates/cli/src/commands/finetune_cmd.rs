//! `finetune`: run the method x train-size x run few-shot grid and write the
//! result table.

use crate::config::{config_hash, save_config, FinetuneCmdConfig};
use crate::manifest::{guard_outputs, RunManifest};
use crate::util::load_mnist_split;
use egomotion::checkpoint::Checkpoint;
use egomotion::finetune::{run_table1, save_model, Method, Table1Options};
use egomotion::Error;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn run(cfg: &FinetuneCmdConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    guard_outputs(
        out,
        &["table.csv", "table.json", "config.json", "manifest.json"],
        overwrite,
    )?;
    let t0 = Instant::now();
    let train = load_mnist_split(&cfg.mnist_dir, "train")?;
    let test = load_mnist_split(&cfg.mnist_dir, "test")?;

    let mut checkpoints = HashMap::new();
    for (method, path) in &cfg.checkpoints {
        if !path.exists() {
            return Err(Error::Config(format!(
                "checkpoint for method `{}` not found at {}",
                method.name(),
                path.display()
            ))
            .into());
        }
        checkpoints.insert(*method, Checkpoint::load(path)?);
    }

    let opts = Table1Options {
        methods: cfg.methods.clone(),
        protocol: cfg.protocol.clone(),
        bcnn_arch: cfg.bcnn_arch.clone(),
        seed: cfg.seed,
        workers: cfg.workers,
    };
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let saved: std::sync::Mutex<Vec<PathBuf>> = std::sync::Mutex::new(Vec::new());
    let sink = |method: Method,
                size: usize,
                run: usize,
                model: &egomotion::finetune::FinetunedModel,
                stats: &egomotion::finetune::FinetuneStats|
     -> egomotion::Result<()> {
        let base = format!("model_{}_{}_run{}", method.name(), size, run);
        let ckpt_path = out.join(format!("{base}.ckpt"));
        save_model(model, stats.iterations, &ckpt_path)?;
        let meta = serde_json::json!({
            "bcnn_arch": cfg.bcnn_arch,
            "head_arch": cfg.protocol.head_arch,
            "method": method.name(),
            "train_size": size,
            "run": run,
            "stats": stats,
        });
        let meta_path = out.join(format!("{base}.json"));
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
            .map_err(egomotion::Error::Io)?;
        let mut guard = saved.lock().unwrap();
        guard.push(ckpt_path);
        guard.push(meta_path);
        Ok(())
    };

    let table = run_table1(
        &opts,
        &train,
        &test,
        &checkpoints,
        if cfg.save_models { Some(&sink) } else { None },
    )?;

    for v in table.check_monotonicity() {
        eprintln!("warning: {v}");
    }

    let csv_path = out.join("table.csv");
    std::fs::write(&csv_path, table.to_csv())?;
    let json_path = out.join("table.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&table)?)?;
    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    artifacts.extend([csv_path, json_path, config_path]);
    let mut saved_paths = saved.into_inner().unwrap();
    saved_paths.sort();
    artifacts.extend(saved_paths);
    let manifest = RunManifest::collect(
        "finetune",
        config_hash(cfg),
        vec![cfg.seed],
        t0.elapsed().as_secs_f64(),
        out,
        &artifacts,
    )?;
    manifest.write(out)?;
    print!("{}", table.to_csv());
    Ok(())
}
