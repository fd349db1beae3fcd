//! Diagnostic plots for `calibrate --plots`. Axes carry no text labels; the
//! numbers behind every plot are in the report document.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use stemsynth::calibration::{BinStat, PpccCurve};

const SIZE: (u32, u32) = (640, 480);

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn save(path: &Path, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(SIZE.0, SIZE.1, rgb).ok_or_else(|| anyhow!("plot buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Per-bin noise std against the bin centre, with the fitted line `k·x + b`.
/// Kept bins are drawn filled, discarded bins hollow.
pub fn std_scatter(path: &Path, bins: &[BinStat], k: f64, b: f64) -> Result<()> {
    let pts: Vec<(f64, f64, bool)> = bins
        .iter()
        .filter(|s| s.std.is_finite())
        .map(|s| (0.5 * (s.lo + s.hi), s.std, s.kept))
        .collect();
    let (x0, x1) = span(bins.iter().flat_map(|s| [s.lo, s.hi]));
    let (y0, y1) = span(pts.iter().map(|p| p.1).chain([k * x0 + b, k * x1 + b]));
    let mut buf = vec![0u8; (SIZE.0 * SIZE.1 * 3) as usize];
    let root = BitMapBackend::with_buffer(&mut buf, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0.min(0.0)..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_labels(0)
        .y_labels(0)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(LineSeries::new(
            [(x0, k * x0 + b), (x1, k * x1 + b)],
            RED.stroke_width(2),
        ))
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(pts.iter().map(|&(x, y, kept)| {
            let style = if kept { BLUE.filled() } else { BLACK.stroke_width(1) };
            Circle::new((x, y), 4, style)
        }))
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    drop(chart);
    drop(root);
    save(path, buf)
}

/// Probability-plot correlation against λ, with the optimum marked.
pub fn ppcc_curve(path: &Path, curve: &PpccCurve) -> Result<()> {
    let (x0, x1) = span(curve.lambdas.iter().copied());
    let (y0, y1) = span(curve.correlations.iter().copied());
    let (best, corr) = curve.best();
    let mut buf = vec![0u8; (SIZE.0 * SIZE.1 * 3) as usize];
    let root = BitMapBackend::with_buffer(&mut buf, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_labels(0)
        .y_labels(0)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(LineSeries::new(
            curve.lambdas.iter().copied().zip(curve.correlations.iter().copied()),
            BLUE.stroke_width(2),
        ))
        .map_err(|e| anyhow!("{e}"))?;
    if best.is_finite() {
        chart
            .draw_series([Circle::new((best, corr), 5, RED.filled())])
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    drop(chart);
    drop(root);
    save(path, buf)
}
