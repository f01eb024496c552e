//! `ego`: the experiment command line.
//!
//! Pipeline commands: `synth-data` -> `pretrain` -> `finetune` -> `eval`,
//! plus `keypoint-eval` and `report`. Every run writes its resolved config,
//! outputs, and a checksummed manifest into `--out`; re-running a persisted
//! config at worker count 1 reproduces the outputs bit for bit.
//!
//! Exit codes: 0 success, 2 configuration/usage, 3 numeric failure
//! (divergence), 4 data/format failure.

use clap::{Parser, Subcommand};
use egomotion_cli::commands;
use egomotion_cli::config::*;
use egomotion_cli::util;
use egomotion::data::PairMode;
use egomotion::finetune::{FewShotProtocol, Method};
use egomotion::nn::WeightInit;
use egomotion::optim::SgdSchedule;
use egomotion::siamese::{PretrainConfig, PretrainMode};
use egomotion::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ego", version, about = "Egomotion-supervised feature learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Output directory (EGO_OUT overrides the default).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing outputs instead of refusing to clobber them.
    #[arg(long)]
    overwrite: bool,
    /// Load the full run configuration from a JSON file (other flags are
    /// ignored).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a transformed-pair dataset from digit images.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Directory with the four canonical IDX files (optionally .gz).
        #[arg(long, default_value = "data/mnist")]
        mnist: PathBuf,
        /// Source split: train or test.
        #[arg(long, default_value = "train")]
        split: String,
        /// Pair labeling: egomotion (binned transforms) or sfa
        /// (similar/dissimilar flags).
        #[arg(long, default_value = "egomotion")]
        mode: String,
        /// Pair count; the full training budget is 5000000.
        #[arg(long)]
        count: Option<u64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Pretrain the two-stream network (egomotion or slow-feature mode).
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mnist: Option<PathBuf>,
        /// Replay pairs from a synth-data record stream instead.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value = "egomotion")]
        mode: String,
        #[arg(long, default_value = "C96-P-C256-P")]
        bcnn_arch: String,
        #[arg(long, default_value = "F1000-D-Op")]
        tcnn_arch: String,
        #[arg(long, default_value_t = 40_000)]
        iters: u64,
        #[arg(long, default_value_t = 125)]
        batch: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 10_000)]
        decay_every: u64,
        #[arg(long, default_value_t = 0.5)]
        decay_factor: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Contrastive margin (slow-feature mode).
        #[arg(long, default_value_t = 10.0)]
        margin: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Weight init: `gaussian:STD` or `scaled` (fan-in).
        #[arg(long, default_value = "gaussian:0.05")]
        init: String,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the few-shot transfer grid and write the result table.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data/mnist")]
        mnist: PathBuf,
        /// Comma-separated methods: scratch, sfa_m10, sfa_m100, egomotion.
        #[arg(long, default_value = "scratch")]
        methods: String,
        #[arg(long)]
        ckpt_egomotion: Option<PathBuf>,
        #[arg(long)]
        ckpt_sfa_m10: Option<PathBuf>,
        #[arg(long)]
        ckpt_sfa_m100: Option<PathBuf>,
        #[arg(long, default_value = "C96-P-C256-P")]
        bcnn_arch: String,
        /// Comma-separated labeled-subset sizes.
        #[arg(long, default_value = "100,300,1000,10000")]
        sizes: String,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 4_000)]
        iters: u64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 125)]
        batch: usize,
        #[arg(long, default_value = "F500-D-Op")]
        head_arch: String,
        /// Weight init: `gaussian:STD` or `scaled` (fan-in).
        #[arg(long = "init", default_value = "gaussian:0.05")]
        ft_init: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Finetune the base network of pretrained methods too (default
        /// freezes it).
        #[arg(long)]
        no_freeze: bool,
        /// Sample subsets uniformly instead of class-stratified.
        #[arg(long)]
        no_stratify: bool,
        /// Parallel (method, size, run) cells (EGO_WORKERS overrides).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Persist each finetuned cell model next to the table.
        #[arg(long)]
        save_models: bool,
    },
    /// Evaluate a saved finetuned model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "data/mnist")]
        mnist: PathBuf,
    },
    /// Score keypoint matching over an annotation set.
    KeypointEval {
        #[command(flatten)]
        common: Common,
        /// JSON list of annotation records.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Feature source: pixels or network.
        #[arg(long, default_value = "pixels")]
        features: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bcnn_arch: Option<String>,
        /// Use the five-conv-layer geometry table for the architecture.
        #[arg(long)]
        alexnet_geometry: bool,
        /// Layer to match on: `pixels`, or conv0/pool0/conv1/...
        #[arg(long, default_value = "pixels")]
        layer: String,
    },
    /// Render merged tables and curves from prior runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Result-table JSON files (repeatable).
        #[arg(long = "table")]
        tables: Vec<PathBuf>,
        /// Binned keypoint curves as `path=label` (repeatable).
        #[arg(long = "binned")]
        binned: Vec<String>,
    },
}

fn parse_init(s: &str) -> anyhow::Result<WeightInit> {
    if s == "scaled" {
        return Ok(WeightInit::ScaledByFanIn);
    }
    if let Some(std) = s.strip_prefix("gaussian:") {
        let std: f64 = std
            .parse()
            .map_err(|_| Error::Config(format!("bad init std `{std}`")))?;
        return Ok(WeightInit::Gaussian { std });
    }
    Err(Error::Config(format!("unknown init `{s}` (scaled|gaussian:STD)")).into())
}

fn parse_mode(s: &str) -> anyhow::Result<PretrainMode> {
    match s {
        "egomotion" => Ok(PretrainMode::Egomotion),
        "sfa" => Ok(PretrainMode::Sfa),
        other => Err(Error::Config(format!("unknown mode `{other}` (egomotion|sfa)")).into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Cmd::SynthData {
            common,
            mnist,
            split,
            mode,
            count,
            seed,
        } => {
            let out = util::env_out(common.out, "synth-data");
            let cfg: SynthConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => SynthConfig {
                    mnist_dir: mnist,
                    split,
                    mode: match mode.as_str() {
                        "egomotion" => PairMode::Egomotion,
                        "sfa" => PairMode::Sfa,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown mode `{other}` (egomotion|sfa)"
                            ))
                            .into())
                        }
                    },
                    count: count
                        .ok_or_else(|| Error::Config("--count is required".into()))?,
                    seed,
                },
            };
            commands::synth::run(&cfg, &out, common.overwrite)
        }
        Cmd::Pretrain {
            common,
            mnist,
            pairs,
            mode,
            bcnn_arch,
            tcnn_arch,
            iters,
            batch,
            lr,
            decay_every,
            decay_factor,
            momentum,
            margin,
            seed,
            init,
            log_every,
            resume,
        } => {
            let out = util::env_out(common.out, "pretrain");
            let cfg: PretrainCmdConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => PretrainCmdConfig {
                    mnist_dir: mnist,
                    pairs_file: pairs,
                    train: PretrainConfig {
                        mode: parse_mode(&mode)?,
                        bcnn_arch,
                        tcnn_arch,
                        schedule: SgdSchedule {
                            base_lr: lr,
                            decay_factor,
                            decay_every,
                            total_iters: iters,
                            batch_size: batch,
                            momentum,
                        },
                        margin,
                        seed,
                        init: parse_init(&init)?,
                        log_every,
                    },
                    resume,
                },
            };
            commands::pretrain::run(&cfg, &out, common.overwrite)
        }
        Cmd::Finetune {
            common,
            mnist,
            methods,
            ckpt_egomotion,
            ckpt_sfa_m10,
            ckpt_sfa_m100,
            bcnn_arch,
            sizes,
            runs,
            iters,
            lr,
            momentum,
            batch,
            head_arch,
            ft_init,
            seed,
            no_freeze,
            no_stratify,
            workers,
            save_models,
        } => {
            let out = util::env_out(common.out, "finetune");
            let cfg: FinetuneCmdConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => {
                    let methods: Vec<Method> = methods
                        .split(',')
                        .map(|m| Method::parse(m.trim()))
                        .collect::<egomotion::Result<_>>()?;
                    let sizes: Vec<usize> = sizes
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse()
                                .map_err(|_| Error::Config(format!("bad subset size `{s}`")))
                        })
                        .collect::<egomotion::Result<_>>()?;
                    let mut checkpoints = Vec::new();
                    for (method, path) in [
                        (Method::Egomotion, ckpt_egomotion),
                        (Method::SfaM10, ckpt_sfa_m10),
                        (Method::SfaM100, ckpt_sfa_m100),
                    ] {
                        if let Some(p) = path {
                            checkpoints.push((method, p));
                        }
                    }
                    FinetuneCmdConfig {
                        mnist_dir: mnist,
                        methods,
                        checkpoints,
                        bcnn_arch,
                        protocol: FewShotProtocol {
                            train_sizes: sizes,
                            runs,
                            freeze_bcnn: !no_freeze,
                            finetune_iters: iters,
                            lr,
                            momentum,
                            batch_size: batch,
                            head_arch,
                            stratified: !no_stratify,
                            init: parse_init(&ft_init)?,
                        },
                        seed,
                        workers: util::env_workers(workers),
                        save_models,
                    }
                }
            };
            commands::finetune_cmd::run(&cfg, &out, common.overwrite)
        }
        Cmd::Eval {
            common,
            model,
            mnist,
        } => {
            let out = util::env_out(common.out, "eval");
            let cfg: EvalCmdConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => EvalCmdConfig {
                    model: model
                        .ok_or_else(|| Error::Config("--model is required".into()))?,
                    mnist_dir: mnist,
                },
            };
            commands::eval::run(&cfg, &out, common.overwrite)
        }
        Cmd::KeypointEval {
            common,
            annotations,
            features,
            checkpoint,
            bcnn_arch,
            alexnet_geometry,
            layer,
        } => {
            let out = util::env_out(common.out, "keypoint-eval");
            let cfg: KeypointCmdConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => KeypointCmdConfig {
                    annotations: annotations
                        .ok_or_else(|| Error::Config("--annotations is required".into()))?,
                    features,
                    checkpoint,
                    bcnn_arch,
                    alexnet_geometry,
                    layer,
                },
            };
            commands::keypoint_cmd::run(&cfg, &out, common.overwrite)
        }
        Cmd::Report {
            common,
            tables,
            binned,
        } => {
            let out = util::env_out(common.out, "report");
            let cfg: ReportCmdConfig = match &common.config {
                Some(path) => load_config(path)?,
                None => {
                    let binned = binned
                        .iter()
                        .map(|spec| match spec.split_once('=') {
                            Some((path, label)) => Ok((PathBuf::from(path), label.to_string())),
                            None => Err(Error::Config(format!(
                                "binned spec `{spec}` is not path=label"
                            ))),
                        })
                        .collect::<egomotion::Result<Vec<_>>>()?;
                    ReportCmdConfig { tables, binned }
                }
            };
            commands::report::run(&cfg, &out, common.overwrite)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Label { .. }
            | Error::Geometry(_) => 2,
            Error::Value(_) | Error::TrainingAbort { .. } => 3,
            Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Input(_) => 4,
        };
    }
    if err.to_string().starts_with("configuration error") {
        return 2;
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
