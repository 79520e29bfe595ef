//! SVG line and bar charts.

use std::path::Path;

use plotters::prelude::*;

use crate::{CliError, CliResult};

const SIZE: (u32, u32) = (800, 500);

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Check(format!("{}: {e}", path.display()))
}

fn span(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    // Flat series still need a visible band.
    let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
    Some((lo - pad, hi + pad))
}

pub fn line(path: &Path, title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> CliResult<()> {
    let no_data = || CliError::NoData(format!("{title}: nothing to plot"));
    let (x0, x1) = span(points.iter().map(|p| p.0)).ok_or_else(no_data)?;
    let (y0, y1) = span(points.iter().map(|p| p.1)).ok_or_else(no_data)?;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err(path))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_err(path))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(draw_err(path))?;
    root.present().map_err(draw_err(path))
}

/// One bar per `(centre, height)`; bar width follows the spacing of the centres.
pub fn bars(path: &Path, title: &str, x_label: &str, bars: &[(f64, f64)]) -> CliResult<()> {
    let no_data = || CliError::NoData(format!("{title}: nothing to plot"));
    if bars.is_empty() || bars.iter().all(|b| b.1 == 0.0) {
        return Err(no_data());
    }
    let half = if bars.len() > 1 { 0.4 * (bars[1].0 - bars[0].0).abs() } else { 0.4 };
    let (x0, x1) = span(bars.iter().flat_map(|b| [b.0 - half, b.0 + half])).ok_or_else(no_data)?;
    let top = bars.iter().map(|b| b.1).fold(0.0, f64::max) * 1.05;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err(path))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, 0.0..top)
        .map_err(draw_err(path))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .draw()
        .map_err(draw_err(path))?;
    chart
        .draw_series(
            bars.iter()
                .map(|&(c, h)| Rectangle::new([(c - half, 0.0), (c + half, h)], BLUE.mix(0.6).filled())),
        )
        .map_err(draw_err(path))?;
    root.present().map_err(draw_err(path))
}
