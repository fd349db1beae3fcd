//! Probability-plot correlation against the Tukey-lambda family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::quantile_from_logs;

/// Largest number of order statistics correlated per evaluation.
pub const DEFAULT_PPCC_SAMPLES: usize = 65_536;

/// Correlation as a function of shape over a grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpccCurve {
    pub lambdas: Vec<f64>,
    pub correlations: Vec<f64>,
}

impl PpccCurve {
    /// Grid point of highest correlation and that correlation.
    pub fn best(&self) -> (f64, f64) {
        let mut best = (f64::NAN, f64::NEG_INFINITY);
        for (&l, &c) in self.lambdas.iter().zip(&self.correlations) {
            if c > best.1 {
                best = (l, c);
            }
        }
        best
    }
}

/// Inclusive grid `min, min + step, ..., max`.
pub fn lambda_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) || !(min > -0.5) {
        return Err(Error::param(format!("invalid lambda grid [{min}, {max}] step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

/// Sorted order statistics with their Filliben plotting positions.
pub(crate) struct ProbPlot {
    values: Vec<f64>,
    lp: Vec<f64>,
    lq: Vec<f64>,
}

fn filliben(i: usize, n: usize) -> f64 {
    let last = 0.5f64.powf(1.0 / n as f64);
    if i == 0 {
        1.0 - last
    } else if i == n - 1 {
        last
    } else {
        (i as f64 + 1.0 - 0.3175) / (n as f64 + 0.365)
    }
}

impl ProbPlot {
    /// Thins to at most `cap` evenly spaced ranks, keeping plotting positions
    /// of the full sample so the tails stay where they belong.
    pub fn new(samples: &[f64], cap: usize) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::Fit("PPCC needs at least three samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sample in PPCC input".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::Fit("degenerate sample: all values equal".into()));
        }
        let n = sorted.len();
        let m = n.min(cap.max(3));
        let ranks: Vec<usize> = (0..m)
            .map(|j| ((j as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize)
            .collect();
        let values = ranks.iter().map(|&r| sorted[r]).collect();
        let p: Vec<f64> = ranks.iter().map(|&r| filliben(r, n)).collect();
        Ok(ProbPlot {
            values,
            lp: p.iter().map(|p| p.ln()).collect(),
            lq: p.iter().map(|p| (-p).ln_1p()).collect(),
        })
    }

    pub fn correlation(&self, lambda: f64) -> f64 {
        let n = self.values.len() as f64;
        let q: Vec<f64> = self
            .lp
            .iter()
            .zip(&self.lq)
            .map(|(&a, &b)| quantile_from_logs(a, b, lambda))
            .collect();
        let mx = self.values.iter().sum::<f64>() / n;
        let mq = q.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in self.values.iter().zip(&q) {
            let (dx, dy) = (x - mx, y - mq);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        sxy / (sxx * syy).sqrt()
    }

    pub fn curve(&self, grid: &[f64]) -> PpccCurve {
        PpccCurve {
            lambdas: grid.to_vec(),
            correlations: grid.iter().map(|&l| self.correlation(l)).collect(),
        }
    }

    /// Grid maximizer found coarse-to-fine (the curve is unimodal in practice).
    pub fn argmax(&self, grid: &[f64]) -> (f64, f64) {
        let stride = 10.min(grid.len()).max(1);
        let mut best = (0, f64::NEG_INFINITY);
        let probe = |i: usize, best: &mut (usize, f64)| {
            let c = self.correlation(grid[i]);
            if c > best.1 {
                *best = (i, c);
            }
        };
        let mut i = 0;
        while i < grid.len() {
            probe(i, &mut best);
            i += stride;
        }
        probe(grid.len() - 1, &mut best);
        let centre = best.0;
        let lo = centre.saturating_sub(stride);
        let hi = (centre + stride).min(grid.len() - 1);
        for i in lo..=hi {
            if i != centre {
                probe(i, &mut best);
            }
        }
        (grid[best.0], best.1)
    }
}

/// PPCC of `samples` at every grid shape.
pub fn ppcc_curve(samples: &[f64], grid: &[f64]) -> Result<PpccCurve> {
    Ok(ProbPlot::new(samples, DEFAULT_PPCC_SAMPLES)?.curve(grid))
}

/// Shape on `grid` with the highest probability-plot correlation.
pub fn ppcc_fit(samples: &[f64], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::param("empty lambda grid"));
    }
    Ok(ProbPlot::new(samples, DEFAULT_PPCC_SAMPLES)?.argmax(grid))
}
