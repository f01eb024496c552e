//! SVG curve rendering for reports.

use plotters::prelude::*;
use std::path::Path;

/// Test error against training-set size, one line per method, log-scaled x.
pub fn error_vs_train_size(
    series: &[(String, Vec<(usize, f64)>)],
    path: &Path,
) -> anyhow::Result<()> {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(x, _)| x as f64))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(_, y)| y))
        .collect();
    if xs.is_empty() {
        anyhow::bail!("no data points to plot");
    }
    let (x_lo, x_hi) = bounds(&xs);
    let y_hi = ys.iter().cloned().fold(0.0f64, f64::max) * 1.15;
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Few-shot test error vs labeled examples", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(54)
        .build_cartesian_2d((x_lo * 0.9..x_hi * 1.1).log_scale(), 0.0..y_hi.max(1.0))?;
    chart
        .configure_mesh()
        .x_desc("labeled training examples")
        .y_desc("test error (%)")
        .draw()?;
    for (i, (label, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                points.iter().map(|&(x, y)| (x as f64, y)),
                color.stroke_width(2),
            ))?
            .label(label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart.draw_series(
            points
                .iter()
                .map(|&(x, y)| Circle::new((x as f64, y), 3, Palette99::pick(i).filled())),
        )?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()?;
    root.present()?;
    Ok(())
}

/// Mean matching error per cumulative viewpoint bin, one line per source.
pub fn error_vs_viewpoint(
    series: &[(String, Vec<(f64, Option<f64>)>)],
    path: &Path,
) -> anyhow::Result<()> {
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().filter_map(|&(_, y)| y))
        .collect();
    if ys.is_empty() {
        anyhow::bail!("no populated viewpoint bins to plot");
    }
    let y_hi = ys.iter().cloned().fold(0.0f64, f64::max) * 1.15;
    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Keypoint matching error vs viewpoint distance", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(54)
        .build_cartesian_2d(0.0..185.0, 0.0..y_hi)?;
    chart
        .configure_mesh()
        .x_desc("viewpoint distance bin upper bound (degrees)")
        .y_desc("mean matching error")
        .draw()?;
    for (i, (label, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|&(x, y)| y.map(|y| (x, y)))
            .collect();
        chart
            .draw_series(LineSeries::new(pts.iter().cloned(), color.stroke_width(2)))?
            .label(label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart.draw_series(
            pts.iter()
                .map(|&(x, y)| Circle::new((x, y), 3, Palette99::pick(i).filled())),
        )?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()?;
    root.present()?;
    Ok(())
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
