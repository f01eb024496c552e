//! Two-stream weight-shared pretraining.
//!
//! One base network (BCNN) computes features for both images of a pair; the
//! two feature maps are concatenated along the channel axis and fed to a top
//! network (TCNN) that classifies the binned relative transform with three
//! softmax heads. The slow-feature baseline drops the TCNN and applies a
//! contrastive margin loss directly to the two feature vectors.
//!
//! Weight sharing is structural: both streams run the same [`Network`], so
//! gradients from both accumulate into one parameter store and an update
//! moves both streams identically.

use crate::arch::{parse_arch, NetworkSpec};
use crate::checkpoint::{Checkpoint, CheckpointEntry};
use crate::data::{PairRecord, PairStream, TransformBins};
use crate::data::{Digits, IMG_SIDE};
use crate::error::{Error, Result};
use crate::nn::{InputShape, Mode, Network, WeightInit};
use crate::ops;
use crate::optim::SgdSchedule;
use crate::rng::{Stream, StreamKind};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Output head widths for the planar egomotion task: x-translation bins,
/// y-translation bins, rotation bins.
pub const EGO_HEADS: [usize; 3] = [7, 7, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMode {
    Egomotion,
    Sfa,
}

/// The two-stream model: a shared base network and, in egomotion mode, the
/// transform-classification top network.
pub struct SiameseModel {
    pub bcnn: Network<f32>,
    pub tcnn: Option<Network<f32>>,
}

impl SiameseModel {
    /// Egomotion configuration: BCNN on 28x28 single-channel inputs, TCNN on
    /// the channel-concatenated feature maps, three output heads.
    pub fn egomotion(
        bcnn_spec: &NetworkSpec,
        tcnn_spec: &NetworkSpec,
        init: WeightInit,
        stream: &mut Stream,
    ) -> Result<Self> {
        let bcnn = Network::build(
            bcnn_spec,
            InputShape::Map(1, IMG_SIDE, IMG_SIDE),
            &[],
            init,
            stream,
        )?;
        let (c, h, w) = bcnn_output_map(&bcnn)?;
        let tcnn = Network::build(
            tcnn_spec,
            InputShape::Map(2 * c, h, w),
            &EGO_HEADS,
            init,
            stream,
        )?;
        Ok(SiameseModel {
            bcnn,
            tcnn: Some(tcnn),
        })
    }

    /// Slow-feature configuration: the stream output is the flattened BCNN
    /// feature vector, no top network.
    pub fn sfa(bcnn_spec: &NetworkSpec, init: WeightInit, stream: &mut Stream) -> Result<Self> {
        let bcnn = Network::build(
            bcnn_spec,
            InputShape::Map(1, IMG_SIDE, IMG_SIDE),
            &[],
            init,
            stream,
        )?;
        Ok(SiameseModel { bcnn, tcnn: None })
    }
}

fn bcnn_output_map(bcnn: &Network<f32>) -> Result<(usize, usize, usize)> {
    let shapes = crate::arch::spatial_shapes(
        bcnn.spec(),
        match bcnn.input_shape() {
            InputShape::Map(c, h, w) => (c, h, w),
            InputShape::Flat(_) => {
                return Err(Error::Config("base network must start spatial".into()))
            }
        },
    )?;
    shapes
        .last()
        .copied()
        .ok_or_else(|| Error::Config("base network has no layers".into()))
}

/// Eval-style forward of one image pair.
pub enum SiameseOutput {
    /// Per-head logits, egomotion mode.
    Logits(Vec<Tensor<f32>>),
    /// The two stream feature vectors, slow-feature mode.
    Features { x_a: Tensor<f32>, x_b: Tensor<f32> },
}

pub fn forward_siamese(
    model: &SiameseModel,
    img_a: &Tensor<f32>,
    img_b: &Tensor<f32>,
    mode: Mode,
    mut dropout: Option<&mut Stream>,
) -> Result<SiameseOutput> {
    let fa = model.bcnn.forward(img_a, mode, dropout.as_deref_mut())?;
    let fb = model.bcnn.forward(img_b, mode, dropout.as_deref_mut())?;
    match &model.tcnn {
        Some(tcnn) => {
            let joint = concat_channels(fa.trunk_output(), fb.trunk_output())?;
            let ft = tcnn.forward(&joint, mode, dropout)?;
            Ok(SiameseOutput::Logits(ft.head_outputs))
        }
        None => Ok(SiameseOutput::Features {
            x_a: flatten2(fa.trunk_output())?,
            x_b: flatten2(fb.trunk_output())?,
        }),
    }
}

/// Concatenates two [B,C,H,W] maps along the channel axis.
pub fn concat_channels(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(Error::dimension(
            "channel",
            format!("cannot concat {:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let (bs, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let plane = c * h * w;
    let mut out = Tensor::zeros(vec![bs, 2 * c, h, w]);
    for bi in 0..bs {
        out.data_mut()[bi * 2 * plane..bi * 2 * plane + plane]
            .copy_from_slice(&a.data()[bi * plane..(bi + 1) * plane]);
        out.data_mut()[bi * 2 * plane + plane..(bi + 1) * 2 * plane]
            .copy_from_slice(&b.data()[bi * plane..(bi + 1) * plane]);
    }
    Ok(out)
}

fn split_channels(joint_grad: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let (bs, c2, h, w) = (
        joint_grad.shape()[0],
        joint_grad.shape()[1],
        joint_grad.shape()[2],
        joint_grad.shape()[3],
    );
    let c = c2 / 2;
    let plane = c * h * w;
    let mut ga = Tensor::zeros(vec![bs, c, h, w]);
    let mut gb = Tensor::zeros(vec![bs, c, h, w]);
    for bi in 0..bs {
        ga.data_mut()[bi * plane..(bi + 1) * plane]
            .copy_from_slice(&joint_grad.data()[bi * 2 * plane..bi * 2 * plane + plane]);
        gb.data_mut()[bi * plane..(bi + 1) * plane]
            .copy_from_slice(&joint_grad.data()[bi * 2 * plane + plane..(bi + 1) * 2 * plane]);
    }
    (ga, gb)
}

fn flatten2(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let b = t.shape()[0];
    let rest: usize = t.shape()[1..].iter().product();
    t.clone().reshaped(vec![b, rest])
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Sum of the three per-head mean cross-entropies, with per-head logit
/// gradients and batch accuracies.
pub struct EgoLoss<T> {
    pub loss: T,
    pub head_grads: Vec<Tensor<T>>,
    pub head_accuracy: [f64; 3],
}

pub fn ego_loss<T: Scalar>(logits: &[Tensor<T>], bins: &[TransformBins]) -> Result<EgoLoss<T>> {
    if logits.len() != 3 {
        return Err(Error::Config(format!(
            "expected 3 heads for the egomotion loss, got {}",
            logits.len()
        )));
    }
    for (head, (t, want)) in logits.iter().zip(EGO_HEADS).enumerate() {
        if t.shape()[1] != want {
            return Err(Error::Config(format!(
                "head {head} has width {}, expected {want}",
                t.shape()[1]
            )));
        }
    }
    let labels: [Vec<usize>; 3] = [
        bins.iter().map(|b| b.tx).collect(),
        bins.iter().map(|b| b.ty).collect(),
        bins.iter().map(|b| b.rot).collect(),
    ];
    let mut loss = T::zero();
    let mut head_grads = Vec::with_capacity(3);
    let mut head_accuracy = [0.0; 3];
    for h in 0..3 {
        let r = ops::softmax_xent(&logits[h], &labels[h])?;
        loss = loss + r.loss;
        head_accuracy[h] = accuracy_of(&r.probs, &labels[h]);
        head_grads.push(r.grad);
    }
    Ok(EgoLoss {
        loss,
        head_grads,
        head_accuracy,
    })
}

fn accuracy_of<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> f64 {
    let (b, c) = (probs.shape()[0], probs.shape()[1]);
    let mut correct = 0usize;
    for bi in 0..b {
        let row = &probs.data()[bi * c..(bi + 1) * c];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels[bi] {
            correct += 1;
        }
    }
    correct as f64 / b as f64
}

/// Contrastive slow-feature loss for one pair of feature vectors, with
/// squared-L2 distance: similar pairs pay their distance, dissimilar pairs
/// pay `max(0, margin - distance)`.
pub fn sfa_pair_loss<T: Scalar>(x_a: &[T], x_b: &[T], similar: bool, margin: f64) -> Result<T> {
    if x_a.len() != x_b.len() {
        return Err(Error::dimension(
            "features",
            format!("{} vs {} feature components", x_a.len(), x_b.len()),
        ));
    }
    let mut d = T::zero();
    for (&a, &b) in x_a.iter().zip(x_b) {
        let diff = a - b;
        d = d + diff * diff;
    }
    Ok(if similar {
        d
    } else {
        (T::from_f64(margin) - d).max(T::zero())
    })
}

/// Batched slow-feature loss (mean over pairs) with gradients on both
/// feature matrices [B,D].
pub struct SfaLoss<T> {
    pub loss: T,
    pub grad_a: Tensor<T>,
    pub grad_b: Tensor<T>,
}

pub fn sfa_loss<T: Scalar>(
    x_a: &Tensor<T>,
    x_b: &Tensor<T>,
    similar: &[bool],
    margin: f64,
) -> Result<SfaLoss<T>> {
    if x_a.shape() != x_b.shape() || x_a.shape().len() != 2 {
        return Err(Error::dimension(
            "features",
            format!("feature shapes {:?} vs {:?}", x_a.shape(), x_b.shape()),
        ));
    }
    let (b, d) = (x_a.shape()[0], x_a.shape()[1]);
    if similar.len() != b {
        return Err(Error::dimension(
            "batch",
            format!("{} flags for batch of {b}", similar.len()),
        ));
    }
    let mut grad_a = Tensor::zeros(vec![b, d]);
    let mut grad_b = Tensor::zeros(vec![b, d]);
    let inv_b = T::from_f64(1.0 / b as f64);
    let two = T::from_f64(2.0);
    let mut total = 0.0f64;
    for bi in 0..b {
        let ra = &x_a.data()[bi * d..(bi + 1) * d];
        let rb = &x_b.data()[bi * d..(bi + 1) * d];
        let pair = sfa_pair_loss(ra, rb, similar[bi], margin)?;
        total += pair.to_f64();
        let active = similar[bi] || pair > T::zero();
        if !active {
            continue;
        }
        // d(dist)/da = 2(a-b); dissimilar active branch flips the sign
        let sign = if similar[bi] { two } else { -two };
        let ga = &mut grad_a.data_mut()[bi * d..(bi + 1) * d];
        let gb = &mut grad_b.data_mut()[bi * d..(bi + 1) * d];
        for j in 0..d {
            let g = sign * (ra[j] - rb[j]) * inv_b;
            ga[j] = g;
            gb[j] = -g;
        }
    }
    Ok(SfaLoss {
        loss: T::from_f64(total / b as f64),
        grad_a,
        grad_b,
    })
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mode: PretrainMode,
    pub bcnn_arch: String,
    pub tcnn_arch: String,
    pub schedule: SgdSchedule,
    /// Contrastive margin, slow-feature mode only.
    pub margin: f64,
    pub seed: u64,
    pub init: WeightInit,
    /// Loss/accuracy log cadence in iterations.
    pub log_every: u64,
}

impl PretrainConfig {
    pub fn default_for(mode: PretrainMode) -> Self {
        PretrainConfig {
            mode,
            bcnn_arch: "C96-P-C256-P".into(),
            tcnn_arch: "F1000-D-Op".into(),
            schedule: SgdSchedule::pretrain_default(),
            margin: 10.0,
            seed: 42,
            init: WeightInit::Gaussian { std: 0.05 },
            log_every: 100,
        }
    }
}

/// Where training pairs come from: generated on the fly as pure functions of
/// (seed, index), or replayed from a record stream (cycled if shorter than
/// the training budget).
pub enum PairSource<'a> {
    Generated { digits: &'a Digits, seed: u64 },
    Records(Vec<PairRecord>),
}

impl<'a> PairSource<'a> {
    fn fetch(&self, start: u64, count: usize) -> Vec<PairRecord> {
        match self {
            PairSource::Generated { digits, seed } => {
                let stream = PairStream::new(digits, *seed, u64::MAX);
                (start..start + count as u64)
                    .map(|i| PairRecord::from(stream.ego_at(i)))
                    .collect()
            }
            PairSource::Records(records) => (start..start + count as u64)
                .map(|i| records[(i % records.len() as u64) as usize].clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    /// Batch accuracy per head (egomotion mode only).
    pub head_accuracy: Option<[f64; 3]>,
}

pub struct PretrainOutcome {
    /// Final parameters, or the last good state when training diverged.
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    /// Set when a non-finite loss or gradient aborted the run.
    pub diverged_at: Option<u64>,
}

/// Runs pretraining from scratch or from a resume checkpoint.
pub fn pretrain(
    config: &PretrainConfig,
    source: &PairSource,
    resume: Option<&Checkpoint>,
) -> Result<PretrainOutcome> {
    config.schedule.validate()?;
    let bcnn_spec = parse_arch(&config.bcnn_arch)?;
    let mut init_stream = Stream::named(config.seed, StreamKind::Init);
    let mut model = match config.mode {
        PretrainMode::Egomotion => {
            let tcnn_spec = parse_arch(&config.tcnn_arch)?;
            SiameseModel::egomotion(&bcnn_spec, &tcnn_spec, config.init, &mut init_stream)?
        }
        PretrainMode::Sfa => SiameseModel::sfa(&bcnn_spec, config.init, &mut init_stream)?,
    };
    let mut vel_bcnn = model.bcnn.new_velocity();
    let mut vel_tcnn = model.tcnn.as_ref().map(|t| t.new_velocity());
    let mut dropout = Stream::named(config.seed, StreamKind::Dropout);
    let mut start_iter = 0u64;
    if let Some(ckpt) = resume {
        restore_network(ckpt, "bcnn", &mut model.bcnn, &mut vel_bcnn)?;
        if let (Some(tcnn), Some(vel)) = (model.tcnn.as_mut(), vel_tcnn.as_mut()) {
            restore_network(ckpt, "tcnn", tcnn, vel)?;
        }
        dropout = Stream::from_state(&ckpt.rng);
        start_iter = ckpt.iteration;
    }

    let batch = config.schedule.batch_size;
    let mut log = Vec::new();
    let mut last_good = snapshot(&model, &vel_bcnn, &vel_tcnn, &dropout, start_iter);
    for t in start_iter..config.schedule.total_iters {
        let records = source.fetch(t * batch as u64, batch);
        let (img_a, img_b) = batch_images(&records);
        let step = match config.mode {
            PretrainMode::Egomotion => train_step_ego(
                &mut model,
                &img_a,
                &img_b,
                &records,
                &mut dropout,
                &mut vel_bcnn,
                vel_tcnn.as_mut().expect("egomotion model has a tcnn"),
                &config.schedule,
                t,
            ),
            PretrainMode::Sfa => train_step_sfa(
                &mut model,
                &img_a,
                &img_b,
                &records,
                &mut dropout,
                &mut vel_bcnn,
                config.margin,
                &config.schedule,
                t,
            ),
        };
        let row = match step {
            Ok(row) => row,
            Err(Error::TrainingAbort { iteration, .. }) => {
                return Ok(PretrainOutcome {
                    checkpoint: last_good,
                    log,
                    diverged_at: Some(iteration),
                });
            }
            Err(e) => return Err(e),
        };
        if !row.loss.is_finite() {
            return Ok(PretrainOutcome {
                checkpoint: last_good,
                log,
                diverged_at: Some(t),
            });
        }
        last_good = snapshot(&model, &vel_bcnn, &vel_tcnn, &dropout, t + 1);
        if t % config.log_every == 0 || t + 1 == config.schedule.total_iters {
            log.push(row);
        }
    }
    Ok(PretrainOutcome {
        checkpoint: last_good,
        log,
        diverged_at: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step_ego(
    model: &mut SiameseModel,
    img_a: &Tensor<f32>,
    img_b: &Tensor<f32>,
    records: &[PairRecord],
    dropout: &mut Stream,
    vel_bcnn: &mut Vec<Vec<f32>>,
    vel_tcnn: &mut Vec<Vec<f32>>,
    schedule: &SgdSchedule,
    t: u64,
) -> Result<TrainLogRow> {
    let fa = model.bcnn.forward(img_a, Mode::Train, Some(dropout))?;
    let fb = model.bcnn.forward(img_b, Mode::Train, Some(dropout))?;
    let joint = concat_channels(fa.trunk_output(), fb.trunk_output())?;
    let tcnn = model.tcnn.as_mut().expect("egomotion model has a tcnn");
    let ft = tcnn.forward(&joint, Mode::Train, Some(dropout))?;
    let bins: Vec<TransformBins> = records.iter().map(|r| r.bins).collect();
    let l = ego_loss(&ft.head_outputs, &bins)?;
    model.bcnn.zero_grads();
    tcnn.zero_grads();
    let joint_grad = tcnn.backward_heads(&ft, &l.head_grads)?;
    let (ga, gb) = split_channels(&joint_grad);
    model.bcnn.backward_trunk(&fa, ga)?;
    model.bcnn.backward_trunk(&fb, gb)?;
    tcnn.sgd_update(vel_tcnn, schedule, t)?;
    model.bcnn.sgd_update(vel_bcnn, schedule, t)?;
    Ok(TrainLogRow {
        iteration: t,
        lr: schedule.lr_at(t),
        loss: l.loss as f64,
        head_accuracy: Some(l.head_accuracy),
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step_sfa(
    model: &mut SiameseModel,
    img_a: &Tensor<f32>,
    img_b: &Tensor<f32>,
    records: &[PairRecord],
    dropout: &mut Stream,
    vel_bcnn: &mut Vec<Vec<f32>>,
    margin: f64,
    schedule: &SgdSchedule,
    t: u64,
) -> Result<TrainLogRow> {
    let fa = model.bcnn.forward(img_a, Mode::Train, Some(dropout))?;
    let fb = model.bcnn.forward(img_b, Mode::Train, Some(dropout))?;
    let xa = flatten2(fa.trunk_output())?;
    let xb = flatten2(fb.trunk_output())?;
    let similar: Vec<bool> = records.iter().map(|r| r.similar).collect();
    let l = sfa_loss(&xa, &xb, &similar, margin)?;
    model.bcnn.zero_grads();
    let ga = l.grad_a.reshaped(fa.trunk_output().shape().to_vec())?;
    let gb = l.grad_b.reshaped(fb.trunk_output().shape().to_vec())?;
    model.bcnn.backward_trunk(&fa, ga)?;
    model.bcnn.backward_trunk(&fb, gb)?;
    model.bcnn.sgd_update(vel_bcnn, schedule, t)?;
    Ok(TrainLogRow {
        iteration: t,
        lr: schedule.lr_at(t),
        loss: l.loss as f64,
        head_accuracy: None,
    })
}

fn batch_images(records: &[PairRecord]) -> (Tensor<f32>, Tensor<f32>) {
    let b = records.len();
    let mut a = Tensor::zeros(vec![b, 1, IMG_SIDE, IMG_SIDE]);
    let mut bb = Tensor::zeros(vec![b, 1, IMG_SIDE, IMG_SIDE]);
    let area = IMG_SIDE * IMG_SIDE;
    for (i, r) in records.iter().enumerate() {
        a.data_mut()[i * area..(i + 1) * area].copy_from_slice(&r.img_a);
        bb.data_mut()[i * area..(i + 1) * area].copy_from_slice(&r.img_b);
    }
    (a, bb)
}

// ---------------------------------------------------------------------------
// checkpoint plumbing
// ---------------------------------------------------------------------------

/// Serializes `(name prefix, network, velocity)` triples plus trainer state.
pub fn model_checkpoint(
    iteration: u64,
    dropout: &Stream,
    parts: &[(&str, &Network<f32>, &[Vec<f32>])],
) -> Checkpoint {
    let mut entries = Vec::new();
    for (prefix, net, vel) in parts {
        for (p, v) in net.params().iter().zip(vel.iter()) {
            entries.push(CheckpointEntry {
                name: format!("{prefix}.{}", p.name),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
            entries.push(CheckpointEntry {
                name: format!("v:{prefix}.{}", p.name),
                shape: p.value.shape().to_vec(),
                data: v.clone(),
            });
        }
    }
    Checkpoint {
        iteration,
        rng: dropout.state(),
        entries,
    }
}

fn snapshot(
    model: &SiameseModel,
    vel_bcnn: &[Vec<f32>],
    vel_tcnn: &Option<Vec<Vec<f32>>>,
    dropout: &Stream,
    iteration: u64,
) -> Checkpoint {
    let mut parts: Vec<(&str, &Network<f32>, &[Vec<f32>])> = vec![("bcnn", &model.bcnn, vel_bcnn)];
    if let (Some(tcnn), Some(vel)) = (&model.tcnn, vel_tcnn) {
        parts.push(("tcnn", tcnn, vel));
    }
    model_checkpoint(iteration, dropout, &parts)
}

/// Restores parameters and momentum state for one `<prefix>.*` network.
pub fn restore_network(
    ckpt: &Checkpoint,
    prefix: &str,
    net: &mut Network<f32>,
    velocity: &mut [Vec<f32>],
) -> Result<()> {
    net.load_values(|name| {
        ckpt.get(&format!("{prefix}.{name}"))
            .map(|e| e.data.clone())
    })?;
    for (p, v) in net.params().iter().zip(velocity.iter_mut()) {
        let entry = ckpt
            .get(&format!("v:{prefix}.{}", p.name))
            .ok_or_else(|| Error::Config(format!("missing velocity for `{}`", p.name)))?;
        if entry.data.len() != v.len() {
            return Err(Error::dimension(
                "param",
                format!("velocity length mismatch for `{}`", p.name),
            ));
        }
        v.copy_from_slice(&entry.data);
    }
    Ok(())
}

/// Loads just the base network's parameters (transfer time: the top network
/// is discarded).
pub fn load_bcnn(ckpt: &Checkpoint, net: &mut Network<f32>) -> Result<()> {
    net.load_values(|name| ckpt.get(&format!("bcnn.{name}")).map(|e| e.data.clone()))
}
