//! `report`: merge finetuning tables and keypoint curves into a rendered
//! CSV plus SVG figures.

use crate::config::{config_hash, save_config, ReportCmdConfig};
use crate::manifest::{guard_outputs, RunManifest};
use crate::plot;
use egomotion::finetune::ResultTable;
use egomotion::keypoint::MatchingEvaluation;
use egomotion::Error;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Deterministic merged rendering of one or more result tables: rows sorted
/// by method name, then training-set size; per-run errors joined by `;`.
pub fn render_merged_csv(tables: &[ResultTable]) -> String {
    let mut rows: Vec<(&str, usize, f64, String)> = Vec::new();
    for t in tables {
        for r in &t.rows {
            rows.push((
                &r.method,
                r.train_size,
                r.mean_error,
                r.per_run_errors
                    .iter()
                    .map(|e| format!("{e:.2}"))
                    .collect::<Vec<_>>()
                    .join(";"),
            ));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
    let mut out = String::from("method,train_size,mean_error,per_run_errors\n");
    for (method, size, mean, runs) in rows {
        out.push_str(&format!("{method},{size},{mean:.2},{runs}\n"));
    }
    out
}

pub fn run(cfg: &ReportCmdConfig, out: &Path, overwrite: bool) -> anyhow::Result<()> {
    if cfg.tables.is_empty() && cfg.binned.is_empty() {
        return Err(Error::Config("report needs tables and/or binned curves".into()).into());
    }
    let mut outputs: Vec<&str> = vec!["config.json", "manifest.json"];
    if !cfg.tables.is_empty() {
        outputs.extend(["report.csv", "error_vs_train_size.svg"]);
    }
    if !cfg.binned.is_empty() {
        outputs.push("error_vs_viewpoint.svg");
    }
    guard_outputs(out, &outputs, overwrite)?;
    let t0 = Instant::now();
    let mut artifacts: Vec<PathBuf> = Vec::new();

    if !cfg.tables.is_empty() {
        let mut tables = Vec::new();
        for path in &cfg.tables {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read table {}: {e}", path.display()))
            })?;
            tables.push(serde_json::from_str::<ResultTable>(&text)?);
        }
        let csv_path = out.join("report.csv");
        std::fs::write(&csv_path, render_merged_csv(&tables))?;
        artifacts.push(csv_path);

        let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
        for t in &tables {
            for r in &t.rows {
                match series.iter_mut().find(|(m, _)| *m == r.method) {
                    Some((_, pts)) => pts.push((r.train_size, r.mean_error)),
                    None => series.push((r.method.clone(), vec![(r.train_size, r.mean_error)])),
                }
            }
        }
        series.sort_by(|a, b| a.0.cmp(&b.0));
        for (_, pts) in &mut series {
            pts.sort_by_key(|&(s, _)| s);
        }
        let svg_path = out.join("error_vs_train_size.svg");
        plot::error_vs_train_size(&series, &svg_path)?;
        artifacts.push(svg_path);
    }

    if !cfg.binned.is_empty() {
        let mut series: Vec<(String, Vec<(f64, Option<f64>)>)> = Vec::new();
        for (path, label) in &cfg.binned {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read curve {}: {e}", path.display()))
            })?;
            let eval: MatchingEvaluation = serde_json::from_str(&text)?;
            series.push((
                label.clone(),
                eval.binned
                    .bins
                    .iter()
                    .map(|b| (b.upper_deg, b.mean_error))
                    .collect(),
            ));
        }
        let svg_path = out.join("error_vs_viewpoint.svg");
        plot::error_vs_viewpoint(&series, &svg_path)?;
        artifacts.push(svg_path);
    }

    let config_path = out.join("config.json");
    save_config(&config_path, cfg)?;
    artifacts.push(config_path);
    let manifest = RunManifest::collect(
        "report",
        config_hash(cfg),
        vec![],
        t0.elapsed().as_secs_f64(),
        out,
        &artifacts,
    )?;
    manifest.write(out)?;
    println!("report written to {}", out.display());
    Ok(())
}
