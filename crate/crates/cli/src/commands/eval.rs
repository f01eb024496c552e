//! `eval`: score a saved finetuned model on the untouched test split.

use crate::config::{config_hash, save_config, EvalCmdConfig};
use crate::manifest::{guard_outputs, RunManifest};
use crate::util::load_mnist_split;
use egomotion::checkpoint::Checkpoint;
use egomotion::finetune::{accuracy_percent, evaluate, load_model};
use egomotion::Error;
use std::path::Path;
use std::time::Instant;

pub fn run(cfg: &EvalCmdConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    guard_outputs(out, &["eval.json", "config.json", "manifest.json"], overwrite)?;
    let t0 = Instant::now();
    let ckpt = Checkpoint::load(&cfg.model)?;
    // architectures ride in the sidecar written at save time
    let meta_path = cfg.model.with_extension("json");
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| {
            Error::Config(format!(
                "missing model sidecar {}: {e}",
                meta_path.display()
            ))
        })?,
    )?;
    let bcnn_arch = meta["bcnn_arch"]
        .as_str()
        .ok_or_else(|| Error::Config("model sidecar lacks bcnn_arch".into()))?;
    let head_arch = meta["head_arch"]
        .as_str()
        .ok_or_else(|| Error::Config("model sidecar lacks head_arch".into()))?;
    let model = load_model(&ckpt, bcnn_arch, head_arch)?;
    let test = load_mnist_split(&cfg.mnist_dir, "test")?;
    let error = evaluate(&model, &test)?;

    let eval_path = out.join("eval.json");
    std::fs::write(
        &eval_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "model": cfg.model.display().to_string(),
            "test_size": test.len(),
            "error_percent": error,
            "accuracy_percent": accuracy_percent(error),
        }))?,
    )?;
    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    let manifest = RunManifest::collect(
        "eval",
        config_hash(cfg),
        vec![],
        t0.elapsed().as_secs_f64(),
        out,
        &[eval_path, config_path],
    )?;
    manifest.write(out)?;
    println!("test error: {error:.2}%");
    Ok(())
}
