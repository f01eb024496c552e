//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Criterion 3 trains the desk-scale budget (two
//! pretraining runs of 8K iterations x 64 pairs = 512K pairs each, then the
//! 3-method x 3-run few-shot grid) and takes on the order of an hour of CPU
//! time; everything else is fast.

use egomotion::arch::{parse_arch, LayerSpec};
use egomotion::checkpoint::Checkpoint;
use egomotion::data::{
    bin_kitti, bin_sf, load_idx, rotation_bin, sf_rotation_bin, translation_bin, BinEdges,
    Digits, KittiBinEdges, SfBinEdges, Transform6DoF,
};
use egomotion::finetune::{
    finetune, run_table1, sample_subset, FewShotProtocol, Method, Table1Options,
};
use egomotion::gradcheck;
use egomotion::keypoint::{
    bin_by_viewpoint, match_pair, matrix_log_frobenius_series, preprocess_box, rotation_about,
    viewpoint_distance, AnnotatedBox, BBox, FeatureMapProvider, ImagePlane, NetworkFeatures,
    PixelFeatures, VIEWPOINT_BINS,
};
use egomotion::nn::{InputShape, Network, WeightInit};
use egomotion::optim::SgdSchedule;
use egomotion::rng::{Stream, StreamKind};
use egomotion::siamese::{
    pretrain, sfa_loss, sfa_pair_loss, PairSource, PretrainConfig, PretrainMode,
};
use egomotion::tensor::Tensor;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist(split: &str) -> Digits {
    let (i, l) = match split {
        "train" => ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        _ => ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
    };
    load_idx(&mnist_dir().join(i), &mnist_dir().join(l)).expect("bundled dataset loads")
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn a1_gradient_correctness() {
    let t0 = std::time::Instant::now();
    let reports = gradcheck::run_full_check(100, 314_159).unwrap();
    let elapsed = t0.elapsed();
    for r in &reports {
        assert_eq!(r.cases, 100, "{}", r.layer);
        assert!(
            r.max_rel_err <= 1e-4,
            "{}: max rel err {}",
            r.layer,
            r.max_rel_err
        );
    }
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 (gradient correctness): PASS — 6 layers x 100 cases, worst rel err {:.2e}, {:.2?}",
        reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max),
        elapsed
    );
}

// ---------------------------------------------------------------------------
// 2. binning oracles
// ---------------------------------------------------------------------------

/// Interval-scan oracle over uniformly spaced half-open bins.
fn scan_bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    for k in 0..bins {
        if v >= lo + k as f64 * width && v < lo + (k + 1) as f64 * width {
            return k;
        }
    }
    if v >= hi {
        bins - 1
    } else {
        0
    }
}

#[test]
fn a2_binning_oracles() {
    // translation: the 7 integers partition exactly
    let bins: Vec<usize> = (-3..=3).map(translation_bin).collect();
    assert_eq!(bins, [0, 1, 2, 3, 4, 5, 6]);

    // rotation: 20 bins of 3 degrees over [-30, 30), dense sweep
    let mut checked = 0u64;
    let mut v = -30.0f64;
    while v < 30.0 {
        assert_eq!(rotation_bin(v), scan_bin(v, -30.0, 30.0, 20), "theta {v}");
        checked += 1;
        v += 0.001;
    }
    assert_eq!(rotation_bin(30.0), 19);

    // 6-DoF rotations: 10 interior + 2 overflow
    let mut v = -45.0f64;
    while v <= 45.0 {
        let want = if v < -30.0 {
            0
        } else if v > 30.0 {
            11
        } else {
            1 + scan_bin(v, -30.0, 30.0, 10)
        };
        assert_eq!(sf_rotation_bin(v), want, "deg {v}");
        checked += 1;
        v += 0.01;
    }

    // 20-bin scheme over supplied edges, dense sweep including the clamps
    let edges = KittiBinEdges {
        trans_z: BinEdges::new(-1.0, 3.0, 20).unwrap(),
        trans_x: BinEdges::new(-2.0, 2.0, 20).unwrap(),
        rot_y: BinEdges::new(-12.0, 12.0, 20).unwrap(),
    };
    let mut v = -1.5f64;
    while v <= 3.5 {
        let got = edges.trans_z.index_of(v).unwrap();
        let want = if v < -1.0 {
            0
        } else if v >= 3.0 {
            19
        } else {
            scan_bin(v, -1.0, 3.0, 20)
        };
        assert_eq!(got, want, "z {v}");
        checked += 1;
        v += 0.0005;
    }
    let t = Transform6DoF {
        euler_deg: [45.0, -6.0, -45.0],
        trans: [0.0, 9.0, 1.0],
    };
    assert_eq!(bin_kitti(&t, &edges).unwrap(), [10, 10, 5]);
    let sf_edges = SfBinEdges {
        trans: [
            BinEdges::new(-2.0, 2.0, 10).unwrap(),
            BinEdges::new(-2.0, 2.0, 10).unwrap(),
            BinEdges::new(-2.0, 2.0, 10).unwrap(),
        ],
    };
    assert_eq!(
        bin_sf(&t, &sf_edges).unwrap(),
        [11, 5, 0, 5, 9, 7]
    );
    println!("ACCEPTANCE 2 (binning oracles): PASS — {checked} swept values, zero mismatches");
}

// ---------------------------------------------------------------------------
// 3. desk-scale few-shot ordering
// ---------------------------------------------------------------------------

/// Declared width-reduced base network for the desk-scale budget.
const DESK_BCNN: &str = "C16-P-C32-P";
const DESK_TCNN: &str = "F1000-D-Op";
const DESK_ITERS: u64 = 8_000;
const DESK_BATCH: usize = 64; // 8000 x 64 = 512K pairs
const PRETRAIN_SEED: u64 = 42;
const TABLE_SEED: u64 = 7;

fn desk_schedule() -> SgdSchedule {
    SgdSchedule {
        base_lr: 0.01,
        decay_factor: 0.5,
        decay_every: 2_000, // keeps the 4-decay shape of the full 40K run
        total_iters: DESK_ITERS,
        batch_size: DESK_BATCH,
        momentum: 0.9,
    }
}

#[test]
fn a3_table1_ordering_at_desk_scale() {
    assert!(DESK_ITERS >= 8_000);
    assert!(DESK_ITERS * DESK_BATCH as u64 >= 500_000);
    let train = load_mnist("train");
    let test = load_mnist("test");
    let source = PairSource::Generated {
        digits: &train,
        seed: PRETRAIN_SEED,
    };

    let t0 = std::time::Instant::now();
    let ego_cfg = PretrainConfig {
        mode: PretrainMode::Egomotion,
        bcnn_arch: DESK_BCNN.into(),
        tcnn_arch: DESK_TCNN.into(),
        schedule: desk_schedule(),
        margin: 10.0,
        seed: PRETRAIN_SEED,
        init: WeightInit::ScaledByFanIn,
        log_every: 100,
    };
    let ego = pretrain(&ego_cfg, &source, None).unwrap();
    assert!(ego.diverged_at.is_none());
    // the loss beats the uniform-logits level ln7+ln7+ln20 early on
    let uniform = 2.0 * (7.0f64).ln() + (20.0f64).ln();
    let early_best = ego
        .log
        .iter()
        .filter(|r| r.iteration <= DESK_ITERS / 20)
        .map(|r| r.loss)
        .fold(f64::INFINITY, f64::min);
    assert!(
        early_best < uniform,
        "no early progress: best {early_best} vs uniform {uniform:.4}"
    );
    eprintln!(
        "a3: egomotion pretraining done in {:.0?} (final loss {:.3})",
        t0.elapsed(),
        ego.log.last().unwrap().loss
    );

    let t1 = std::time::Instant::now();
    let sfa_cfg = PretrainConfig {
        mode: PretrainMode::Sfa,
        ..ego_cfg.clone()
    };
    let sfa = pretrain(&sfa_cfg, &source, None).unwrap();
    assert!(sfa.diverged_at.is_none());
    assert!(sfa.log.iter().all(|r| r.loss >= 0.0));
    eprintln!(
        "a3: slow-feature pretraining done in {:.0?} (final loss {:.3})",
        t1.elapsed(),
        sfa.log.last().unwrap().loss
    );

    let t2 = std::time::Instant::now();
    let opts = Table1Options {
        methods: vec![Method::Scratch, Method::SfaM10, Method::Egomotion],
        protocol: FewShotProtocol {
            train_sizes: vec![100],
            runs: 3,
            ..FewShotProtocol::default()
        },
        bcnn_arch: DESK_BCNN.into(),
        seed: TABLE_SEED,
        workers: 1,
    };
    let checkpoints = HashMap::from([
        (Method::Egomotion, ego.checkpoint),
        (Method::SfaM10, sfa.checkpoint),
    ]);
    let table = run_table1(&opts, &train, &test, &checkpoints, None).unwrap();
    eprintln!("a3: finetune grid done in {:.0?}", t2.elapsed());
    print!("{}", table.to_csv());

    let e_ego = table.mean_error(Method::Egomotion, 100).unwrap();
    let e_sfa = table.mean_error(Method::SfaM10, 100).unwrap();
    let e_scratch = table.mean_error(Method::Scratch, 100).unwrap();
    assert!(
        e_ego < e_sfa && e_sfa < e_scratch,
        "ordering violated: ego {e_ego:.2} sfa {e_sfa:.2} scratch {e_scratch:.2}"
    );
    assert!(
        e_scratch - e_ego >= 5.0,
        "margin too small: ego {e_ego:.2} vs scratch {e_scratch:.2}"
    );
    println!(
        "ACCEPTANCE 3 (desk-scale ordering): PASS — mean error at 100 examples: egomotion {e_ego:.2}% < sfa(m=10) {e_sfa:.2}% < scratch {e_scratch:.2}% (gap {:.2}pp, total {:.0?})",
        e_scratch - e_ego,
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 4. frozen-transfer sanity
// ---------------------------------------------------------------------------

#[test]
fn a4_frozen_transfer_sanity() {
    let train = load_mnist("train");
    // a cheap pretraining checkpoint: the criterion is about the protocol
    let cfg = PretrainConfig {
        mode: PretrainMode::Egomotion,
        bcnn_arch: "C8-P-C16-P".into(),
        tcnn_arch: "F64-D-Op".into(),
        schedule: SgdSchedule {
            total_iters: 50,
            batch_size: 16,
            ..SgdSchedule::pretrain_default()
        },
        margin: 10.0,
        seed: 5,
        init: WeightInit::ScaledByFanIn,
        log_every: 25,
    };
    let out = pretrain(
        &cfg,
        &PairSource::Generated {
            digits: &train,
            seed: 5,
        },
        None,
    )
    .unwrap();

    let protocol = FewShotProtocol::default(); // 4000 iters, batch 125, lr 0.01
    let mut subset_stream = Stream::indexed(9, StreamKind::Subset, 0);
    let subset = sample_subset(&train, 10_000, true, &mut subset_stream);
    let bcnn_spec = parse_arch("C8-P-C16-P").unwrap();
    let (_, stats) = finetune(
        &bcnn_spec,
        Some(&out.checkpoint),
        true,
        &protocol,
        &train,
        &subset,
        9,
        0,
    )
    .unwrap();
    assert_eq!(
        stats.bcnn_fingerprint_before, stats.bcnn_fingerprint_after,
        "frozen base network must stay bit-identical"
    );
    assert_eq!(stats.batch_size_used, 125);
    assert_eq!(stats.iterations, 4_000);
    assert_eq!(stats.epochs_completed, 50.0, "4000 x 125 / 10000 epochs");
    println!(
        "ACCEPTANCE 4 (frozen transfer): PASS — fingerprints equal ({:016x}), exactly 50 epochs of 125-example batches",
        stats.bcnn_fingerprint_after
    );
}

// ---------------------------------------------------------------------------
// 5. slow-feature loss properties
// ---------------------------------------------------------------------------

#[test]
fn a5_sfa_loss_properties() {
    let m = 10.0;
    // similar branch: exactly the squared-L2 distance, over a grid
    for d in [0.0f64, 0.25, 1.0, 4.0, 9.0, 10.0, 16.0, 100.0] {
        let a = vec![0.0f64, 0.0, 0.0];
        let b = vec![d.sqrt(), 0.0, 0.0];
        let sim = sfa_pair_loss(&a, &b, true, m).unwrap();
        assert!((sim - d).abs() < 1e-12, "similar branch at d={d}");
        let dis = sfa_pair_loss(&a, &b, false, m).unwrap();
        let want = (m - d).max(0.0);
        assert!((dis - want).abs() < 1e-12, "dissimilar branch at d={d}");
    }
    // one-step gradient sign test with a learning-rate-sized step
    let step = 0.01;
    let xa = Tensor::new(vec![1, 2], vec![1.5f64, -0.5]).unwrap();
    let xb = Tensor::new(vec![1, 2], vec![0.5f64, 0.5]).unwrap();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let d0 = dist(xa.data(), xb.data());
    assert!(d0 < m);
    for (similar, expect_contract) in [(true, true), (false, false)] {
        let l = sfa_loss(&xa, &xb, &[similar], m).unwrap();
        let moved_a: Vec<f64> = xa
            .data()
            .iter()
            .zip(l.grad_a.data())
            .map(|(x, g)| x - step * g)
            .collect();
        let moved_b: Vec<f64> = xb
            .data()
            .iter()
            .zip(l.grad_b.data())
            .map(|(x, g)| x - step * g)
            .collect();
        let d1 = dist(&moved_a, &moved_b);
        if expect_contract {
            assert!(d1 < d0, "similar pair must contract: {d1} vs {d0}");
        } else {
            assert!(d1 > d0, "dissimilar pair below margin must expand: {d1} vs {d0}");
        }
    }
    println!("ACCEPTANCE 5 (slow-feature loss): PASS — branch grid exact, one-step contraction/expansion verified");
}

// ---------------------------------------------------------------------------
// 6. keypoint mathematics
// ---------------------------------------------------------------------------

#[test]
fn a6_keypoint_math() {
    // matching an image against its exact copy at every layer
    let mut s = Stream::named(60, StreamKind::Init);
    let mut data = vec![0.0f32; 180 * 180];
    for v in data.iter_mut() {
        *v = s.next_f64() as f32;
    }
    let image = ImagePlane::new(180, 180, 1, data).unwrap();
    let boxed = AnnotatedBox {
        image,
        bbox: BBox {
            x: 8,
            y: 8,
            w: 160,
            h: 160,
        },
        keypoints: vec![
            ("a".into(), 30.0, 40.0),
            ("b".into(), 100.0, 60.0),
            ("c".into(), 80.0, 140.0),
        ],
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        class_id: "widget".into(),
    };
    let pa = preprocess_box(&boxed).unwrap();
    let pb = pa.clone();
    let diag = pb.image.diagonal();

    let recs = match_pair(&pa, &pb, &PixelFeatures, "pixels").unwrap();
    for r in &recs {
        assert!(r.error <= 1.0 / diag, "pixels/{}: {}", r.name, r.error);
    }
    let spec = parse_arch(DESK_BCNN).unwrap();
    let net: Network<f32> = Network::build(
        &spec,
        InputShape::Map(1, 28, 28),
        &[],
        WeightInit::ScaledByFanIn,
        &mut Stream::named(61, StreamKind::Init),
    )
    .unwrap();
    let provider = NetworkFeatures::new(&net);
    let mut layers_checked = 1;
    for layer in provider.layer_names() {
        let (_, rf) = provider.extract(&pa.image, &layer).unwrap();
        let recs = match_pair(&pa, &pb, &provider, &layer).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs {
            assert!(
                r.error <= rf.stride as f64 / diag,
                "{layer}/{}: {} > {}/{diag}",
                r.name,
                r.error,
                rf.stride
            );
        }
        layers_checked += 1;
    }

    // viewpoint distance at 90 degrees against the closed form and the
    // series oracle
    let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let r90 = rotation_about([0.4, -1.2, 0.8], std::f64::consts::FRAC_PI_2);
    let d = viewpoint_distance(&r90, &eye).unwrap();
    let want = std::f64::consts::SQRT_2 * std::f64::consts::FRAC_PI_2;
    let oracle = matrix_log_frobenius_series(&r90);
    assert!((d - want).abs() < 1e-8, "{d} vs sqrt2*pi/2 {want}");
    assert!((d - oracle).abs() < 1e-8, "{d} vs series {oracle}");

    // cumulative bins against an enumeration oracle
    let degs = [3.0f64, 17.5, 18.0, 36.5, 90.0, 141.0, 179.5];
    let pairs: Vec<(f64, f64)> = degs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.to_radians(), 0.05 * (i + 1) as f64))
        .collect();
    let binned = bin_by_viewpoint(&pairs);
    assert_eq!(binned.bins.len(), VIEWPOINT_BINS);
    let mut prev = 0usize;
    for (k, b) in binned.bins.iter().enumerate() {
        let upper = (k + 1) as f64 * 18.0;
        let members: Vec<f64> = pairs
            .iter()
            .filter(|(rad, _)| rad.to_degrees() <= upper)
            .map(|&(_, e)| e)
            .collect();
        assert_eq!(b.count, members.len(), "bin {k}");
        assert!(b.count >= prev, "cumulative counts must not decrease");
        prev = b.count;
        match b.mean_error {
            Some(m) => {
                let want = members.iter().sum::<f64>() / members.len() as f64;
                assert!((m - want).abs() < 1e-12);
            }
            None => assert!(members.is_empty()),
        }
    }
    println!(
        "ACCEPTANCE 6 (keypoint math): PASS — self-match bounded on {layers_checked} layers, 90-degree distance {d:.9} within 1e-8 of the series oracle, bin counts exact"
    );
}

// ---------------------------------------------------------------------------
// 7. stage determinism from persisted configs
// ---------------------------------------------------------------------------

fn ego_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ego"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {cmd:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Re-runs a stage from its persisted config into a fresh directory and
/// asserts every manifest-listed artifact is byte-identical.
fn assert_replay_identical(cmd: &str, first: &Path, second: &Path) {
    run_ok(ego_bin().args([
        cmd,
        "--config",
        first.join("config.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]));
    let manifest: egomotion_cli::manifest::RunManifest =
        serde_json::from_str(&std::fs::read_to_string(first.join("manifest.json")).unwrap())
            .unwrap();
    assert!(!manifest.artifacts.is_empty());
    for a in &manifest.artifacts {
        let x = std::fs::read(first.join(&a.path)).unwrap();
        let y = std::fs::read(second.join(&a.path)).unwrap();
        assert_eq!(x, y, "{cmd}: artifact {} differs on replay", a.path);
    }
    // the manifests agree on every artifact checksum (wall time may differ)
    let manifest2: egomotion_cli::manifest::RunManifest =
        serde_json::from_str(&std::fs::read_to_string(second.join("manifest.json")).unwrap())
            .unwrap();
    for (a, b) in manifest.artifacts.iter().zip(&manifest2.artifacts) {
        assert_eq!(a.path, b.path);
        assert_eq!(a.crc32, b.crc32, "{cmd}: checksum mismatch for {}", a.path);
    }
}

#[test]
fn a7_stage_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = mnist_dir();
    let mnist = mnist.to_str().unwrap();

    // synth-data
    let synth = dir.path().join("synth");
    run_ok(ego_bin().args([
        "synth-data", "--mnist", mnist, "--count", "30", "--seed", "3", "--out",
        synth.to_str().unwrap(),
    ]));
    assert_replay_identical("synth-data", &synth, &dir.path().join("synth2"));

    // pretrain (from the synthesized stream, worker count is always 1)
    let pre = dir.path().join("pre");
    run_ok(ego_bin().args([
        "pretrain",
        "--pairs",
        synth.join("pairs.bin").to_str().unwrap(),
        "--bcnn-arch",
        "C4-P-C8-P",
        "--tcnn-arch",
        "F16-D-Op",
        "--iters",
        "12",
        "--batch",
        "6",
        "--seed",
        "3",
        "--out",
        pre.to_str().unwrap(),
    ]));
    assert_replay_identical("pretrain", &pre, &dir.path().join("pre2"));

    // finetune (single tiny cell, workers 1)
    let ft = dir.path().join("ft");
    run_ok(ego_bin().args([
        "finetune",
        "--mnist",
        mnist,
        "--methods",
        "egomotion",
        "--ckpt-egomotion",
        pre.join("model.ckpt").to_str().unwrap(),
        "--bcnn-arch",
        "C4-P-C8-P",
        "--sizes",
        "50",
        "--runs",
        "1",
        "--iters",
        "20",
        "--batch",
        "25",
        "--head-arch",
        "F16-D-Op",
        "--workers",
        "1",
        "--save-models",
        "--out",
        ft.to_str().unwrap(),
    ]));
    assert_replay_identical("finetune", &ft, &dir.path().join("ft2"));

    // eval
    let ev = dir.path().join("ev");
    run_ok(ego_bin().args([
        "eval",
        "--model",
        ft.join("model_egomotion_50_run0.ckpt").to_str().unwrap(),
        "--mnist",
        mnist,
        "--out",
        ev.to_str().unwrap(),
    ]));
    assert_replay_identical("eval", &ev, &dir.path().join("ev2"));

    // keypoint-eval over generated annotations
    let anno_dir = dir.path().join("anno");
    std::fs::create_dir_all(&anno_dir).unwrap();
    let mut records = Vec::new();
    for i in 0..3u32 {
        let img = image::GrayImage::from_fn(90, 90, |x, y| {
            image::Luma([((x * 13 + y * 29 + i * 41) % 241) as u8])
        });
        img.save(anno_dir.join(format!("o{i}.png"))).unwrap();
        records.push(serde_json::json!({
            "image": format!("o{i}.png"),
            "bbox": [4, 4, 80, 80],
            "class": "widget",
            "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
            "keypoints": {"k1": [20.0, 30.0], "k2": [60.0, 50.0]},
        }));
    }
    let anno = anno_dir.join("annotations.json");
    std::fs::write(&anno, serde_json::to_string(&records).unwrap()).unwrap();
    let kp = dir.path().join("kp");
    run_ok(ego_bin().args([
        "keypoint-eval",
        "--annotations",
        anno.to_str().unwrap(),
        "--features",
        "pixels",
        "--layer",
        "pixels",
        "--out",
        kp.to_str().unwrap(),
    ]));
    assert_replay_identical("keypoint-eval", &kp, &dir.path().join("kp2"));

    // report
    let rep = dir.path().join("rep");
    run_ok(ego_bin().args([
        "report",
        "--table",
        ft.join("table.json").to_str().unwrap(),
        "--binned",
        &format!("{}=pixels", kp.join("binned.json").display()),
        "--out",
        rep.to_str().unwrap(),
    ]));
    assert_replay_identical("report", &rep, &dir.path().join("rep2"));

    println!("ACCEPTANCE 7 (stage determinism): PASS — all 6 stages replay bit-identically from persisted configs at worker count 1");
}

// ---------------------------------------------------------------------------
// 8. parser round trips
// ---------------------------------------------------------------------------

#[test]
fn a8_parser() {
    for s in ["C96-P-C256-P", "F1000-D-Op"] {
        assert_eq!(parse_arch(s).unwrap().print(), s);
    }
    // base-plus-head composition round-trips
    let bcnn = parse_arch("C96-P-C256-P").unwrap();
    let head = parse_arch("F500-D-Op").unwrap();
    let composed = bcnn.concat(&head).unwrap();
    assert_eq!(composed.print(), "C96-P-C256-P-F500-D-Op");
    assert_eq!(parse_arch(&composed.print()).unwrap(), composed);

    // malformed strings yield positioned errors
    for (s, pos) in [("", 0), ("C96-", 4), ("X5", 0), ("C96- P", 4), ("Op-F10", 3)] {
        match parse_arch(s) {
            Err(egomotion::Error::Parse { pos: p, .. }) => {
                assert_eq!(p, pos, "position for `{s}`")
            }
            other => panic!("`{s}` should fail to parse, got {other:?}"),
        }
    }

    // the five-conv trunk
    let big = parse_arch("C96-P-C256-P-C384-C384-C256-P").unwrap();
    let kinds: Vec<&str> = big
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv { .. } => "C",
            LayerSpec::Pool { .. } => "P",
            LayerSpec::Fc { .. } => "F",
            LayerSpec::Dropout => "D",
            LayerSpec::Output => "Op",
        })
        .collect();
    assert_eq!(kinds, ["C", "P", "C", "P", "C", "C", "C", "P"]);
    let widths: Vec<usize> = big
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv { width, .. } => Some(*width),
            _ => None,
        })
        .collect();
    assert_eq!(widths, [96, 256, 384, 384, 256]);

    // the conv top network
    let tcnn = parse_arch("C256-C128-F500-D-Op").unwrap();
    assert_eq!(tcnn.print(), "C256-C128-F500-D-Op");
    assert!(matches!(
        tcnn.layers.as_slice(),
        [
            LayerSpec::Conv { width: 256, .. },
            LayerSpec::Conv { width: 128, .. },
            LayerSpec::Fc { width: 500, .. },
            LayerSpec::Dropout,
            LayerSpec::Output
        ]
    ));
    println!("ACCEPTANCE 8 (parser): PASS — round trips, positioned errors, documented layer lists");
}

// ---------------------------------------------------------------------------
// checkpoint surface used by later pipeline stages
// ---------------------------------------------------------------------------

#[test]
fn pretrain_checkpoints_expose_base_network_parameters() {
    // the transfer stage reads `bcnn.*` entries and ignores the rest
    let train = load_mnist("train");
    let cfg = PretrainConfig {
        mode: PretrainMode::Egomotion,
        bcnn_arch: "C4-P-C8-P".into(),
        tcnn_arch: "F16-D-Op".into(),
        schedule: SgdSchedule {
            total_iters: 3,
            batch_size: 4,
            ..SgdSchedule::pretrain_default()
        },
        margin: 10.0,
        seed: 1,
        init: WeightInit::ScaledByFanIn,
        log_every: 1,
    };
    let out = pretrain(
        &cfg,
        &PairSource::Generated {
            digits: &train,
            seed: 1,
        },
        None,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    for name in ["bcnn.conv0.w", "bcnn.conv0.b", "bcnn.conv1.w", "bcnn.conv1.b"] {
        assert!(back.get(name).is_some(), "{name}");
    }
    assert_eq!(back.iteration, 3);
}
