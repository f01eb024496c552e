//! `keypoint-eval`: run the keypoint-matching protocol over an annotation
//! set with a chosen feature extractor.

use crate::config::{config_hash, save_config, KeypointCmdConfig};
use crate::manifest::{guard_outputs, RunManifest};
use egomotion::arch::{parse_arch_with, GeometryProfile};
use egomotion::checkpoint::Checkpoint;
use egomotion::keypoint::{
    evaluate_matching, AnnotatedBox, AnnotationRecord, FeatureMapProvider, ImagePlane,
    NetworkFeatures, PixelFeatures,
};
use egomotion::nn::{InputShape, Network, WeightInit};
use egomotion::rng::{Stream, StreamKind};
use egomotion::Error;
use std::path::Path;
use std::time::Instant;

/// Loads an image as single-channel grayscale in [0,1].
pub fn load_gray_image(path: &Path) -> anyhow::Result<ImagePlane> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("cannot load image {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Ok(ImagePlane::new(h, w, 1, data)?)
}

pub fn run(cfg: &KeypointCmdConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    guard_outputs(
        out,
        &["pairs.csv", "binned.json", "config.json", "manifest.json"],
        overwrite,
    )?;
    let t0 = Instant::now();
    let text = std::fs::read_to_string(&cfg.annotations)?;
    let records: Vec<AnnotationRecord> = serde_json::from_str(&text)?;
    if records.is_empty() {
        return Err(Error::Config("annotation set is empty".into()).into());
    }
    let base_dir = cfg
        .annotations
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let mut boxes: Vec<AnnotatedBox> = Vec::with_capacity(records.len());
    for rec in records {
        let image = load_gray_image(&base_dir.join(&rec.image))?;
        boxes.push(rec.into_annotated(image)?);
    }

    // the network provider borrows the net, so it must outlive the dispatch
    let network: Option<Network<f32>> = match cfg.features.as_str() {
        "pixels" => None,
        "network" => {
            let (ckpt_path, arch) = match (&cfg.checkpoint, &cfg.bcnn_arch) {
                (Some(c), Some(a)) => (c, a),
                _ => {
                    return Err(Error::Config(
                        "network features need --checkpoint and --bcnn-arch".into(),
                    )
                    .into())
                }
            };
            let profile = if cfg.alexnet_geometry {
                GeometryProfile::alexnet()
            } else {
                GeometryProfile::mnist()
            };
            let spec = parse_arch_with(arch, &profile)?;
            let mut init = Stream::named(0, StreamKind::Init);
            let mut net = Network::build(
                &spec,
                InputShape::Map(1, 28, 28),
                &[],
                WeightInit::ScaledByFanIn,
                &mut init,
            )?;
            let ckpt = Checkpoint::load(ckpt_path)?;
            net.load_values(|name| ckpt.get(&format!("bcnn.{name}")).map(|e| e.data.clone()))?;
            Some(net)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown feature source `{other}` (pixels|network)"
            ))
            .into())
        }
    };
    let pixel_provider = PixelFeatures;
    let network_provider = network.as_ref().map(NetworkFeatures::new);
    let provider: &dyn FeatureMapProvider = match &network_provider {
        Some(p) => p,
        None => &pixel_provider,
    };

    let eval = evaluate_matching(&boxes, provider, &cfg.layer)?;

    let mut csv = String::from(
        "class,index_a,index_b,shared_keypoints,viewpoint_distance_deg,instance_error\n",
    );
    for p in &eval.pairs {
        csv.push_str(&format!(
            "{},{},{},{},{:.4},{:.6}\n",
            p.class_id,
            p.index_a,
            p.index_b,
            p.shared_keypoints,
            p.viewpoint_distance_rad.to_degrees(),
            p.instance_error
        ));
    }
    let csv_path = out.join("pairs.csv");
    std::fs::write(&csv_path, csv)?;
    let binned_path = out.join("binned.json");
    std::fs::write(&binned_path, serde_json::to_string_pretty(&eval)?)?;
    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    let manifest = RunManifest::collect(
        "keypoint-eval",
        config_hash(cfg),
        vec![],
        t0.elapsed().as_secs_f64(),
        out,
        &[csv_path, binned_path, config_path],
    )?;
    manifest.write(out)?;
    match eval.mean_class_error {
        Some(e) => println!(
            "{} pairs over {} classes; mean class error {:.4}",
            eval.pairs.len(),
            eval.class_errors.len(),
            e
        ),
        None => println!("no scorable pairs ({} skipped)", eval.skipped_pairs.len()),
    }
    Ok(())
}
