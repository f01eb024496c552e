//! Few-shot transfer: attach a classifier head to a pretrained (or random)
//! base network, finetune on a small labeled subset, and report test error.
//!
//! The protocol: class-stratified subsets of {100, 300, 1000, 10000}
//! examples, 3 runs with recorded seeds, 4K iterations at a constant
//! learning rate of 0.01 in 125-example batches (the batch shrinks to the
//! subset when the subset is smaller), evaluation on the untouched 10K test
//! set, errors reported as percentages.

use crate::arch::{parse_arch, NetworkSpec};
use crate::checkpoint::Checkpoint;
use crate::data::{Digits, IMG_AREA, IMG_SIDE};
use crate::error::{Error, Result};
use crate::nn::{InputShape, Mode, Network, WeightInit};
use crate::ops;
use crate::optim::SgdSchedule;
use crate::rng::{Stream, StreamKind};
use crate::siamese::load_bcnn;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

pub const DIGIT_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotProtocol {
    pub train_sizes: Vec<usize>,
    pub runs: usize,
    pub freeze_bcnn: bool,
    pub finetune_iters: u64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub head_arch: String,
    /// Class-stratified subset sampling (recorded in outputs).
    pub stratified: bool,
    /// Weight init for the head and (in scratch cells) the base network.
    pub init: WeightInit,
}

impl Default for FewShotProtocol {
    fn default() -> Self {
        FewShotProtocol {
            train_sizes: vec![100, 300, 1000, 10_000],
            runs: 3,
            freeze_bcnn: true,
            finetune_iters: 4_000,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 125,
            head_arch: "F500-D-Op".into(),
            stratified: true,
            init: WeightInit::Gaussian { std: 0.05 },
        }
    }
}

impl FewShotProtocol {
    pub fn schedule(&self) -> SgdSchedule {
        SgdSchedule {
            base_lr: self.lr,
            decay_factor: 1.0,
            decay_every: u64::MAX,
            total_iters: self.finetune_iters,
            batch_size: self.batch_size,
            momentum: self.momentum,
        }
    }
}

/// Draws a subset of `size` training indices. Stratified mode takes an equal
/// share per class (remainder spread over the lowest class ids); plain mode
/// samples uniformly without replacement.
pub fn sample_subset(train: &Digits, size: usize, stratified: bool, stream: &mut Stream) -> Vec<usize> {
    assert!(size <= train.len());
    if !stratified {
        let mut all: Vec<usize> = (0..train.len()).collect();
        stream.shuffle(&mut all);
        all.truncate(size);
        return all;
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); DIGIT_CLASSES];
    for i in 0..train.len() {
        per_class[train.label(i) as usize].push(i);
    }
    let mut subset = Vec::with_capacity(size);
    for (c, bucket) in per_class.iter_mut().enumerate() {
        let share = size / DIGIT_CLASSES + usize::from(c < size % DIGIT_CLASSES);
        stream.shuffle(bucket);
        assert!(share <= bucket.len(), "class {c} has too few examples");
        subset.extend_from_slice(&bucket[..share]);
    }
    subset
}

/// Infinite pass-shuffled batch order over a subset.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    stream: Stream,
}

impl BatchSampler {
    fn new(n: usize, mut stream: Stream) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        stream.shuffle(&mut order);
        BatchSampler {
            order,
            pos: 0,
            stream,
        }
    }

    fn next_batch(&mut self, bs: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(bs);
        while out.len() < bs {
            if self.pos == self.order.len() {
                self.stream.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// A finetuned digit classifier: base network plus classifier head.
pub struct FinetunedModel {
    pub bcnn: Network<f32>,
    pub head: Network<f32>,
}

impl FinetunedModel {
    /// Top-1 predictions for a batch of images (first index wins ties).
    pub fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        let f = self.bcnn.forward(images, Mode::Eval, None)?;
        let flat = flatten2(f.trunk_output())?;
        let h = self.head.forward(&flat, Mode::Eval, None)?;
        Ok(argmax_rows(&h.head_outputs[0]))
    }
}

fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    (0..b)
        .map(|bi| {
            let row = &logits.data()[bi * c..(bi + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn flatten2(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let b = t.shape()[0];
    let rest: usize = t.shape()[1..].iter().product();
    t.clone().reshaped(vec![b, rest])
}

/// Evaluation-mode base-network features for a set of digit images,
/// computed in fixed-size chunks: returns [n, D].
pub fn bcnn_features(
    bcnn: &Network<f32>,
    digits: &Digits,
    indices: Option<&[usize]>,
) -> Result<Tensor<f32>> {
    let n = indices.map_or(digits.len(), |ix| ix.len());
    let probe = images_tensor(digits, &[0]);
    let f = bcnn.forward(&probe, Mode::Eval, None)?;
    let dim: usize = f.trunk_output().shape()[1..].iter().product();
    let mut out = Tensor::zeros(vec![n, dim]);
    const CHUNK: usize = 250;
    let mut done = 0;
    while done < n {
        let take = CHUNK.min(n - done);
        let idx: Vec<usize> = (done..done + take)
            .map(|i| indices.map_or(i, |ix| ix[i]))
            .collect();
        let images = images_tensor(digits, &idx);
        let f = bcnn.forward(&images, Mode::Eval, None)?;
        let flat = flatten2(f.trunk_output())?;
        out.data_mut()[done * dim..(done + take) * dim].copy_from_slice(flat.data());
        done += take;
    }
    Ok(out)
}

fn images_tensor(digits: &Digits, indices: &[usize]) -> Tensor<f32> {
    let mut t = Tensor::zeros(vec![indices.len(), 1, IMG_SIDE, IMG_SIDE]);
    for (row, &i) in indices.iter().enumerate() {
        t.data_mut()[row * IMG_AREA..(row + 1) * IMG_AREA].copy_from_slice(digits.image(i));
    }
    t
}

fn gather_rows(features: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let dim = features.shape()[1];
    let mut t = Tensor::zeros(vec![rows.len(), dim]);
    for (r, &i) in rows.iter().enumerate() {
        t.data_mut()[r * dim..(r + 1) * dim]
            .copy_from_slice(&features.data()[i * dim..(i + 1) * dim]);
    }
    t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneStats {
    pub batch_size_used: usize,
    pub epochs_completed: f64,
    pub iterations: u64,
    pub bcnn_fingerprint_before: u64,
    pub bcnn_fingerprint_after: u64,
    pub subset_size: usize,
}

/// Finetunes a head (plus the base network when not frozen) on the given
/// subset. `init` carries the pretraining checkpoint, or `None` for random
/// initialization. Streams derive from `(seed, cell)` so independent cells
/// are reproducible in isolation.
pub fn finetune(
    bcnn_arch: &NetworkSpec,
    init: Option<&Checkpoint>,
    freeze_bcnn: bool,
    protocol: &FewShotProtocol,
    train: &Digits,
    subset: &[usize],
    seed: u64,
    cell: u64,
) -> Result<(FinetunedModel, FinetuneStats)> {
    if subset.is_empty() {
        return Err(Error::Config("empty finetuning subset".into()));
    }
    let schedule = SgdSchedule {
        batch_size: protocol.batch_size.min(subset.len()),
        ..protocol.schedule()
    };
    schedule.validate()?;
    let head_spec = parse_arch(&protocol.head_arch)?;
    let mut init_stream = Stream::indexed(seed, StreamKind::Init, cell);
    let mut bcnn = Network::build(
        bcnn_arch,
        InputShape::Map(1, IMG_SIDE, IMG_SIDE),
        &[],
        protocol.init,
        &mut init_stream,
    )?;
    if let Some(ckpt) = init {
        load_bcnn(ckpt, &mut bcnn)?;
    }
    let feat_dim: usize = {
        let shapes = crate::arch::spatial_shapes(bcnn.spec(), (1, IMG_SIDE, IMG_SIDE))?;
        let (c, h, w) = *shapes.last().ok_or_else(|| {
            Error::Config("base network has no layers".into())
        })?;
        c * h * w
    };
    let mut head = Network::build(
        &head_spec,
        InputShape::Flat(feat_dim),
        &[DIGIT_CLASSES],
        protocol.init,
        &mut init_stream,
    )?;

    let fingerprint_before = bcnn.param_fingerprint();
    let labels: Vec<usize> = subset.iter().map(|&i| train.label(i) as usize).collect();
    let mut dropout = Stream::indexed(seed, StreamKind::Dropout, cell);
    let mut sampler = BatchSampler::new(
        subset.len(),
        Stream::indexed(seed, StreamKind::Shuffle, cell),
    );
    let mut vel_head = head.new_velocity();

    if freeze_bcnn {
        // The base network never changes, so its features are computed once.
        let features = bcnn_features(&bcnn, train, Some(subset))?;
        for t in 0..schedule.total_iters {
            let rows = sampler.next_batch(schedule.batch_size);
            let x = gather_rows(&features, &rows);
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let fwd = head.forward(&x, Mode::Train, Some(&mut dropout))?;
            let sm = ops::softmax_xent(&fwd.head_outputs[0], &y)?;
            head.zero_grads();
            head.backward_heads(&fwd, &[sm.grad])?;
            head.sgd_update(&mut vel_head, &schedule, t)?;
        }
    } else {
        let mut vel_bcnn = bcnn.new_velocity();
        for t in 0..schedule.total_iters {
            let rows = sampler.next_batch(schedule.batch_size);
            let idx: Vec<usize> = rows.iter().map(|&r| subset[r]).collect();
            let images = images_tensor(train, &idx);
            let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let fb = bcnn.forward(&images, Mode::Train, Some(&mut dropout))?;
            let flat = flatten2(fb.trunk_output())?;
            let fh = head.forward(&flat, Mode::Train, Some(&mut dropout))?;
            let sm = ops::softmax_xent(&fh.head_outputs[0], &y)?;
            bcnn.zero_grads();
            head.zero_grads();
            let grad_flat = head.backward_heads(&fh, &[sm.grad])?;
            let grad_map = grad_flat.reshaped(fb.trunk_output().shape().to_vec())?;
            bcnn.backward_trunk(&fb, grad_map)?;
            head.sgd_update(&mut vel_head, &schedule, t)?;
            bcnn.sgd_update(&mut vel_bcnn, &schedule, t)?;
        }
    }

    let stats = FinetuneStats {
        batch_size_used: schedule.batch_size,
        epochs_completed: schedule.total_iters as f64 * schedule.batch_size as f64
            / subset.len() as f64,
        iterations: schedule.total_iters,
        bcnn_fingerprint_before: fingerprint_before,
        bcnn_fingerprint_after: bcnn.param_fingerprint(),
        subset_size: subset.len(),
    };
    Ok((FinetunedModel { bcnn, head }, stats))
}

/// Serializes a finetuned model (base + head parameters; no optimizer
/// state — finetuned models are evaluation artifacts).
pub fn save_model(model: &FinetunedModel, iterations: u64, path: &std::path::Path) -> Result<()> {
    let mut entries = Vec::new();
    for (prefix, net) in [("bcnn", &model.bcnn), ("head", &model.head)] {
        for p in net.params() {
            entries.push(crate::checkpoint::CheckpointEntry {
                name: format!("{prefix}.{}", p.name),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
        }
    }
    let ckpt = Checkpoint {
        iteration: iterations,
        rng: Stream::named(0, StreamKind::Dropout).state(),
        entries,
    };
    ckpt.save(path)
}

/// Rebuilds a finetuned model from its checkpoint and architecture strings.
pub fn load_model(ckpt: &Checkpoint, bcnn_arch: &str, head_arch: &str) -> Result<FinetunedModel> {
    let bcnn_spec = parse_arch(bcnn_arch)?;
    let head_spec = parse_arch(head_arch)?;
    let mut init = Stream::named(0, StreamKind::Init);
    let mut bcnn = Network::build(
        &bcnn_spec,
        InputShape::Map(1, IMG_SIDE, IMG_SIDE),
        &[],
        WeightInit::ScaledByFanIn,
        &mut init,
    )?;
    bcnn.load_values(|name| ckpt.get(&format!("bcnn.{name}")).map(|e| e.data.clone()))?;
    let feat_dim: usize = {
        let shapes = crate::arch::spatial_shapes(bcnn.spec(), (1, IMG_SIDE, IMG_SIDE))?;
        let (c, h, w) = *shapes
            .last()
            .ok_or_else(|| Error::Config("base network has no layers".into()))?;
        c * h * w
    };
    let mut head = Network::build(
        &head_spec,
        InputShape::Flat(feat_dim),
        &[DIGIT_CLASSES],
        WeightInit::ScaledByFanIn,
        &mut init,
    )?;
    head.load_values(|name| ckpt.get(&format!("head.{name}")).map(|e| e.data.clone()))?;
    Ok(FinetunedModel { bcnn, head })
}

/// Top-1 error percentage over a test set.
pub fn evaluate(model: &FinetunedModel, test: &Digits) -> Result<f64> {
    let mut wrong = 0usize;
    const CHUNK: usize = 500;
    let mut done = 0;
    while done < test.len() {
        let take = CHUNK.min(test.len() - done);
        let idx: Vec<usize> = (done..done + take).collect();
        let preds = model.predict(&images_tensor(test, &idx))?;
        for (p, &i) in preds.iter().zip(&idx) {
            if *p != test.label(i) as usize {
                wrong += 1;
            }
        }
        done += take;
    }
    Ok(100.0 * wrong as f64 / test.len() as f64)
}

/// Accuracy as the exact complement of [`evaluate`].
pub fn accuracy_percent(error_percent: f64) -> f64 {
    100.0 - error_percent
}

// ---------------------------------------------------------------------------
// the method x size x run grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scratch,
    SfaM10,
    SfaM100,
    Egomotion,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Scratch => "scratch",
            Method::SfaM10 => "sfa_m10",
            Method::SfaM100 => "sfa_m100",
            Method::Egomotion => "egomotion",
        }
    }

    pub fn all() -> [Method; 4] {
        [
            Method::Scratch,
            Method::SfaM10,
            Method::SfaM100,
            Method::Egomotion,
        ]
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }

    pub fn needs_checkpoint(&self) -> bool {
        !matches!(self, Method::Scratch)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub train_size: usize,
    pub per_run_errors: Vec<f64>,
    pub mean_error: f64,
    pub run_cells: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub root_seed: u64,
    pub bcnn_arch: String,
    pub protocol: FewShotProtocol,
    /// Frozen-base flag applied to the pretrained methods.
    pub freeze_pretrained_bcnn: bool,
}

impl ResultTable {
    pub fn mean_error(&self, method: Method, size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method.name() && r.train_size == size)
            .map(|r| r.mean_error)
    }

    /// Errors are percentages of a 10K test set, so two decimals are exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,train_size,mean_error");
        let runs = self.rows.first().map_or(0, |r| r.per_run_errors.len());
        for r in 1..=runs {
            out.push_str(&format!(",error_run{r}"));
        }
        for r in 1..=runs {
            out.push_str(&format!(",cell_run{r}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.2}",
                row.method, row.train_size, row.mean_error
            ));
            for e in &row.per_run_errors {
                out.push_str(&format!(",{e:.2}"));
            }
            for c in &row.run_cells {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Mean error should not grow with training-set size; one percentage
    /// point of slack absorbs run-to-run noise. Returns the violations.
    pub fn check_monotonicity(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let methods: Vec<String> = {
            let mut m: Vec<String> = self.rows.iter().map(|r| r.method.clone()).collect();
            m.dedup();
            m
        };
        for method in methods {
            let mut rows: Vec<&ResultRow> = self
                .rows
                .iter()
                .filter(|r| r.method == method)
                .collect();
            rows.sort_by_key(|r| r.train_size);
            for pair in rows.windows(2) {
                if pair[1].mean_error > pair[0].mean_error + 1.0 {
                    violations.push(format!(
                        "{method}: error rose from {:.2}% at {} to {:.2}% at {}",
                        pair[0].mean_error,
                        pair[0].train_size,
                        pair[1].mean_error,
                        pair[1].train_size
                    ));
                }
            }
        }
        violations
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Options {
    pub methods: Vec<Method>,
    pub protocol: FewShotProtocol,
    pub bcnn_arch: String,
    pub seed: u64,
    /// Cap on concurrently evaluated (method, size, run) cells.
    pub workers: usize,
}

/// Stable cell id for stream derivation: independent of evaluation order.
fn cell_id(method: Method, size_idx: usize, run: usize) -> u64 {
    ((method as u64) << 20) | ((size_idx as u64) << 10) | run as u64
}

/// Callback invoked with every finished cell model (method, size, run).
pub type ModelSink<'a> =
    &'a (dyn Fn(Method, usize, usize, &FinetunedModel, &FinetuneStats) -> Result<()> + Sync);

/// Runs the full method x train-size x run grid and aggregates the table.
pub fn run_table1(
    opts: &Table1Options,
    train: &Digits,
    test: &Digits,
    checkpoints: &HashMap<Method, Checkpoint>,
    model_sink: Option<ModelSink>,
) -> Result<ResultTable> {
    for m in &opts.methods {
        if m.needs_checkpoint() && !checkpoints.contains_key(m) {
            return Err(Error::Config(format!(
                "method `{}` needs a pretraining checkpoint",
                m.name()
            )));
        }
    }
    let bcnn_spec = parse_arch(&opts.bcnn_arch)?;
    struct Cell {
        method: Method,
        size_idx: usize,
        size: usize,
        run: usize,
    }
    let mut cells = Vec::new();
    for (size_idx, &size) in opts.protocol.train_sizes.iter().enumerate() {
        for &method in &opts.methods {
            for run in 0..opts.protocol.runs {
                cells.push(Cell {
                    method,
                    size_idx,
                    size,
                    run,
                });
            }
        }
    }
    let results: Mutex<HashMap<(usize, usize), (Method, usize, Vec<(usize, f64, u64)>)>> =
        Mutex::new(HashMap::new());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let run_cell = |cell: &Cell| -> Result<()> {
        let id = cell_id(cell.method, cell.size_idx, cell.run);
        let mut subset_stream = Stream::indexed(opts.seed, StreamKind::Subset, id);
        let subset = sample_subset(train, cell.size, opts.protocol.stratified, &mut subset_stream);
        let freeze = cell.method.needs_checkpoint() && opts.protocol.freeze_bcnn;
        let ckpt = checkpoints.get(&cell.method);
        let (model, stats) = finetune(
            &bcnn_spec,
            ckpt,
            freeze,
            &opts.protocol,
            train,
            &subset,
            opts.seed,
            id,
        )?;
        if freeze && stats.bcnn_fingerprint_before != stats.bcnn_fingerprint_after {
            return Err(Error::Value(
                "frozen base network changed during finetuning".into(),
            ));
        }
        let err = evaluate(&model, test)?;
        if let Some(sink) = model_sink {
            sink(cell.method, cell.size, cell.run, &model, &stats)?;
        }
        let mut guard = results.lock().unwrap();
        let entry = guard
            .entry((cell.size_idx, cell.method as usize))
            .or_insert_with(|| (cell.method, cell.size, Vec::new()));
        entry.2.push((cell.run, err, id));
        Ok(())
    };
    let worker_count = opts.workers.max(1).min(cells.len().max(1));
    if worker_count <= 1 {
        for cell in &cells {
            run_cell(cell)?;
        }
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for _ in 0..worker_count {
                handles.push(scope.spawn(|| -> Result<()> {
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= cells.len() {
                            return Ok(());
                        }
                        run_cell(&cells[i])?;
                    }
                }));
            }
            for h in handles {
                h.join().expect("table cell worker panicked")?;
            }
            Ok(())
        })?;
    }

    let mut rows = Vec::new();
    let guard = results.into_inner().unwrap();
    let mut keys: Vec<&(usize, usize)> = guard.keys().collect();
    keys.sort();
    for key in keys {
        let (method, size, mut runs) = guard[key].clone();
        runs.sort_by_key(|&(run, _, _)| run);
        let errors: Vec<f64> = runs.iter().map(|&(_, e, _)| e).collect();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        rows.push(ResultRow {
            method: method.name().into(),
            train_size: size,
            per_run_errors: errors,
            mean_error: mean,
            run_cells: runs.iter().map(|&(_, _, c)| c).collect(),
        });
    }
    Ok(ResultTable {
        rows,
        root_seed: opts.seed,
        bcnn_arch: opts.bcnn_arch.clone(),
        protocol: opts.protocol.clone(),
        freeze_pretrained_bcnn: opts.protocol.freeze_bcnn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::{pretrain, PairSource, PretrainConfig, PretrainMode};

    fn toy_digits(n: usize) -> Digits {
        // Ten distinguishable synthetic "digit" classes: axis-aligned bars
        // whose position/orientation depends on the class.
        let mut images = vec![0.0f32; n * IMG_AREA];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % DIGIT_CLASSES;
            labels.push(class as u8);
            let img = &mut images[i * IMG_AREA..(i + 1) * IMG_AREA];
            let offset = 4 + 2 * (class % 5);
            if class < 5 {
                for x in 4..24 {
                    for t in 0..3 {
                        img[(offset + t) * IMG_SIDE + x] = 0.9;
                    }
                }
            } else {
                for y in 4..24 {
                    for t in 0..3 {
                        img[y * IMG_SIDE + offset + t] = 0.9;
                    }
                }
            }
        }
        Digits::from_parts(images, labels).unwrap()
    }

    #[test]
    fn stratified_subsets_have_equal_class_shares() {
        let d = toy_digits(600);
        let mut s = Stream::indexed(1, StreamKind::Subset, 0);
        let subset = sample_subset(&d, 100, true, &mut s);
        assert_eq!(subset.len(), 100);
        let mut counts = [0usize; DIGIT_CLASSES];
        for &i in &subset {
            counts[d.label(i) as usize] += 1;
        }
        assert_eq!(counts, [10; DIGIT_CLASSES]);
        // no duplicates
        let mut sorted = subset.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
    }

    #[test]
    fn same_seed_gives_same_subset() {
        let d = toy_digits(600);
        let a = sample_subset(&d, 50, true, &mut Stream::indexed(9, StreamKind::Subset, 3));
        let b = sample_subset(&d, 50, true, &mut Stream::indexed(9, StreamKind::Subset, 3));
        assert_eq!(a, b);
    }

    fn quick_protocol(iters: u64) -> FewShotProtocol {
        FewShotProtocol {
            train_sizes: vec![40],
            runs: 1,
            finetune_iters: iters,
            head_arch: "F32-D-Op".into(),
            batch_size: 20,
            ..FewShotProtocol::default()
        }
    }

    #[test]
    fn frozen_finetune_leaves_the_base_network_bit_identical() {
        let d = toy_digits(200);
        let bcnn = parse_arch("C4-P-C8-P").unwrap();
        let cfg = PretrainConfig {
            bcnn_arch: "C4-P-C8-P".into(),
            tcnn_arch: "F16-D-Op".into(),
            schedule: crate::optim::SgdSchedule {
                total_iters: 5,
                batch_size: 4,
                ..crate::optim::SgdSchedule::pretrain_default()
            },
            ..PretrainConfig::default_for(PretrainMode::Egomotion)
        };
        let out = pretrain(
            &cfg,
            &PairSource::Generated {
                digits: &d,
                seed: 1,
            },
            None,
        )
        .unwrap();
        let subset = sample_subset(
            &d,
            40,
            true,
            &mut Stream::indexed(2, StreamKind::Subset, 0),
        );
        let (_, stats) = finetune(
            &bcnn,
            Some(&out.checkpoint),
            true,
            &quick_protocol(30),
            &d,
            &subset,
            2,
            0,
        )
        .unwrap();
        assert_eq!(
            stats.bcnn_fingerprint_before,
            stats.bcnn_fingerprint_after
        );
    }

    #[test]
    fn unfrozen_finetune_changes_the_base_network() {
        let d = toy_digits(200);
        let bcnn = parse_arch("C4-P-C8-P").unwrap();
        let subset = sample_subset(
            &d,
            40,
            true,
            &mut Stream::indexed(2, StreamKind::Subset, 0),
        );
        let (_, stats) = finetune(
            &bcnn,
            None,
            false,
            &quick_protocol(30),
            &d,
            &subset,
            2,
            0,
        )
        .unwrap();
        assert_ne!(
            stats.bcnn_fingerprint_before,
            stats.bcnn_fingerprint_after
        );
    }

    #[test]
    fn ten_k_subset_with_batch_125_runs_exactly_50_epochs() {
        // pure arithmetic on the stats: 4000 iterations * 125 / 10000
        let protocol = FewShotProtocol::default();
        let epochs = protocol.finetune_iters as f64 * protocol.batch_size as f64 / 10_000.0;
        assert_eq!(epochs, 50.0);
    }

    #[test]
    fn batch_shrinks_to_subset_size() {
        let d = toy_digits(200);
        let bcnn = parse_arch("C4-P-C8-P").unwrap();
        let subset: Vec<usize> = (0..30).collect();
        let mut p = quick_protocol(10);
        p.batch_size = 125;
        let (_, stats) = finetune(&bcnn, None, false, &p, &d, &subset, 3, 0).unwrap();
        assert_eq!(stats.batch_size_used, 30);
    }

    #[test]
    fn constant_predictor_error_matches_label_count_oracle() {
        let d = toy_digits(250); // 25 per class
        let bcnn = parse_arch("C4-P-C8-P").unwrap();
        let mut s = Stream::indexed(5, StreamKind::Init, 0);
        // zero weights everywhere: logits are all zero, argmax picks class 0
        let bz = Network::build(
            &bcnn,
            InputShape::Map(1, IMG_SIDE, IMG_SIDE),
            &[],
            WeightInit::Gaussian { std: 0.0 },
            &mut s,
        )
        .unwrap();
        let head = Network::build(
            &parse_arch("F8-Op").unwrap(),
            InputShape::Flat(8 * 4 * 4),
            &[DIGIT_CLASSES],
            WeightInit::Gaussian { std: 0.0 },
            &mut s,
        )
        .unwrap();
        let model = FinetunedModel { bcnn: bz, head };
        let err = evaluate(&model, &d).unwrap();
        let class0 = d.labels().iter().filter(|&&l| l == 0).count();
        let want = 100.0 * (d.len() - class0) as f64 / d.len() as f64;
        assert!((err - want).abs() < 1e-12);
        assert_eq!(accuracy_percent(err), 100.0 - err);
    }

    #[test]
    fn perfectly_learned_toy_task_reaches_zero_error() {
        // 10 rigid classes, unfrozen training on plenty of iterations
        let d = toy_digits(200);
        let bcnn = parse_arch("C4-P-C8-P").unwrap();
        let subset: Vec<usize> = (0..100).collect();
        let mut p = quick_protocol(400);
        p.batch_size = 50;
        let (model, _) = finetune(&bcnn, None, false, &p, &d, &subset, 7, 0).unwrap();
        let err = evaluate(&model, &d).unwrap();
        assert_eq!(err, 0.0, "toy classes are exactly learnable");
    }

    #[test]
    fn run_table1_requires_checkpoints_for_pretrained_methods() {
        let d = toy_digits(100);
        let opts = Table1Options {
            methods: vec![Method::Egomotion],
            protocol: quick_protocol(5),
            bcnn_arch: "C4-P-C8-P".into(),
            seed: 1,
            workers: 1,
        };
        let err = run_table1(&opts, &d, &d, &HashMap::new(), None).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("egomotion"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn monotonicity_checker_flags_rising_error() {
        let table = ResultTable {
            rows: vec![
                ResultRow {
                    method: "scratch".into(),
                    train_size: 100,
                    per_run_errors: vec![20.0],
                    mean_error: 20.0,
                    run_cells: vec![0],
                },
                ResultRow {
                    method: "scratch".into(),
                    train_size: 300,
                    per_run_errors: vec![25.0],
                    mean_error: 25.0,
                    run_cells: vec![1],
                },
            ],
            root_seed: 0,
            bcnn_arch: "C4-P-C8-P".into(),
            protocol: FewShotProtocol::default(),
            freeze_pretrained_bcnn: true,
        };
        assert_eq!(table.check_monotonicity().len(), 1);
        let ok = ResultTable {
            rows: vec![
                ResultRow {
                    method: "scratch".into(),
                    train_size: 100,
                    per_run_errors: vec![20.0],
                    mean_error: 20.0,
                    run_cells: vec![0],
                },
                ResultRow {
                    method: "scratch".into(),
                    train_size: 300,
                    per_run_errors: vec![20.5],
                    mean_error: 20.5,
                    run_cells: vec![1],
                },
            ],
            ..table
        };
        assert!(ok.check_monotonicity().is_empty());
    }

    #[test]
    fn csv_rendering_is_stable() {
        let table = ResultTable {
            rows: vec![ResultRow {
                method: "egomotion".into(),
                train_size: 100,
                per_run_errors: vec![8.71, 9.02],
                mean_error: 8.865,
                run_cells: vec![3, 4],
            }],
            root_seed: 42,
            bcnn_arch: "C16-P-C32-P".into(),
            protocol: FewShotProtocol::default(),
            freeze_pretrained_bcnn: true,
        };
        assert_eq!(
            table.to_csv(),
            "method,train_size,mean_error,error_run1,error_run2,cell_run1,cell_run2\n\
             egomotion,100,8.87,8.71,9.02,3,4\n"
        );
    }
}
