//! `pretrain`: run two-stream pretraining and write the checkpoint plus the
//! training log.

use crate::config::{config_hash, save_config, PretrainCmdConfig};
use crate::manifest::{guard_outputs, RunManifest};
use crate::util::load_mnist_split;
use egomotion::checkpoint::Checkpoint;
use egomotion::data::{read_pair_records, PairMode};
use egomotion::siamese::{pretrain, PairSource, PretrainMode, TrainLogRow};
use egomotion::Error;
use std::path::Path;
use std::time::Instant;

pub fn write_log_csv(path: &Path, log: &[TrainLogRow]) -> anyhow::Result<()> {
    let mut csv = String::from("iteration,lr,loss,acc_tx,acc_ty,acc_rot\n");
    for r in log {
        match r.head_accuracy {
            Some([tx, ty, rot]) => csv.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4}\n",
                r.iteration, r.lr, r.loss, tx, ty, rot
            )),
            None => csv.push_str(&format!("{},{},{},,,\n", r.iteration, r.lr, r.loss)),
        }
    }
    std::fs::write(path, csv)?;
    Ok(())
}

pub fn run(cfg: &PretrainCmdConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    guard_outputs(
        out,
        &["model.ckpt", "train_log.csv", "config.json", "manifest.json"],
        overwrite,
    )?;
    let t0 = Instant::now();

    let digits;
    let source = match (&cfg.pairs_file, &cfg.mnist_dir) {
        (Some(path), _) => {
            let (mode, records) = read_pair_records(path)?;
            let want = match cfg.train.mode {
                PretrainMode::Egomotion => PairMode::Egomotion,
                PretrainMode::Sfa => PairMode::Sfa,
            };
            if mode != want {
                return Err(Error::Config(format!(
                    "pair stream {} holds {:?} pairs but training mode is {:?}",
                    path.display(),
                    mode,
                    cfg.train.mode
                ))
                .into());
            }
            if records.is_empty() {
                return Err(Error::Config("pair stream is empty".into()).into());
            }
            PairSource::Records(records)
        }
        (None, Some(dir)) => {
            digits = load_mnist_split(dir, "train")?;
            PairSource::Generated {
                digits: &digits,
                seed: cfg.train.seed,
            }
        }
        (None, None) => {
            return Err(
                Error::Config("pretrain needs either a pair stream or a dataset dir".into())
                    .into(),
            )
        }
    };
    let resume = match &cfg.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    let outcome = pretrain(&cfg.train, &source, resume.as_ref())?;

    let ckpt_path = out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;
    let log_path = out.join("train_log.csv");
    write_log_csv(&log_path, &outcome.log)?;
    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    let manifest = RunManifest::collect(
        "pretrain",
        config_hash(cfg),
        vec![cfg.train.seed],
        t0.elapsed().as_secs_f64(),
        out,
        &[ckpt_path.clone(), log_path, config_path],
    )?;
    manifest.write(out)?;

    if let Some(at) = outcome.diverged_at {
        return Err(Error::TrainingAbort {
            iteration: at,
            msg: format!(
                "non-finite loss; last good checkpoint (iteration {}) saved to {}",
                outcome.checkpoint.iteration,
                ckpt_path.display()
            ),
        }
        .into());
    }
    println!(
        "pretrained {:?} for {} iterations; final loss {:.4}; checkpoint {}",
        cfg.train.mode,
        outcome.checkpoint.iteration,
        outcome.log.last().map_or(f64::NAN, |r| r.loss),
        ckpt_path.display()
    );
    Ok(())
}
