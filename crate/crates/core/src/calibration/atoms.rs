//! Atom detection and a parametric clean-image model: isotropic Gaussian
//! columns plus a smooth background.

use serde::{Deserialize, Serialize};

use super::binning::quantile;
use crate::error::{Error, Result};
use crate::image::{gaussian_blur_2d, max_filter, min_filter, ImageGray};

/// Minimum max−min of the blurred frame for it to count as atom-bearing.
pub const ATOM_RANGE_THRESHOLD: f64 = 5.0;
/// Peak height over the local floor, in pixel-noise stds, that a candidate
/// must clear.
const NOISE_PEAK_SIGMAS: f64 = 3.0;
/// Amplitude significance an atom needs to survive the first pass.
const RESIDUAL_SIGNIFICANCE: f64 = 8.0;
/// A frame needs at least one candidate this significant to hold atoms.
pub const FRAME_SIGNIFICANCE: f64 = 10.0;
pub const MIN_SIGNIFICANCE: f64 = 5.0;

/// Settings for detection and fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtomFitConfig {
    /// Pre-detection blur.
    pub sigma_detect: f64,
    /// Peak must exceed this fraction of the 99th-percentile peak height.
    pub detect_threshold: f64,
    /// Background smoothing sigma.
    pub sigma_background: f64,
    pub iterations: usize,
}

impl Default for AtomFitConfig {
    fn default() -> Self {
        AtomFitConfig {
            sigma_detect: 1.5,
            detect_threshold: 0.2,
            sigma_background: 8.0,
            iterations: 4,
        }
    }
}

/// Fitted scene in "atoms bright" polarity.
#[derive(Clone, Debug)]
pub struct AtomModel {
    pub positions: Vec<[f64; 2]>,
    pub sigmas: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Summed atom field.
    pub field: ImageGray,
    /// Smooth background.
    pub background: ImageGray,
    /// Median nearest-neighbour distance.
    pub spacing: f64,
    /// Robust pixel-noise std of the final residual.
    pub noise_std: f64,
}

impl AtomModel {
    /// Field plus background.
    pub fn clean(&self) -> ImageGray {
        self.field.add(&self.background).expect("same dims")
    }

    /// Amplitude over its white-noise standard error for each atom, given
    /// pixel noise `noise_std`.
    pub fn significance(&self, noise_std: f64) -> Vec<f64> {
        (0..self.positions.len())
            .map(|i| self.amplitudes[i] * self.template_spread(i) / noise_std.max(1e-9))
            .collect()
    }

    /// Root sum of squares of the mean-removed unit Gaussian over the fit
    /// window; the amplitude standard error is `noise / spread`.
    pub fn template_spread(&self, i: usize) -> f64 {
        let (w, h) = self.field.dims();
        let rw = ((self.spacing / 2.0).floor() as usize).max(2);
        let win = window(self.positions[i], rw, w, h);
        let inv = 1.0 / (2.0 * self.sigmas[i].powi(2));
        let n = win.r2.len() as f64;
        let (mut sg, mut sgg) = (0.0, 0.0);
        for r2 in &win.r2 {
            let g = (-r2 * inv).exp();
            sg += g;
            sgg += g * g;
        }
        (sgg - sg * sg / n).max(0.0).sqrt()
    }

    /// Continuous field value at each fitted centre.
    pub fn centre_heights(&self) -> Vec<f64> {
        let n = self.positions.len();
        let reach: Vec<f64> = self.sigmas.iter().map(|s| 5.0 * s).collect();
        (0..n)
            .map(|i| {
                let [xi, yi] = self.positions[i];
                let mut h = 0.0;
                for (j, &r) in reach.iter().enumerate() {
                    let [xj, yj] = self.positions[j];
                    let (dx, dy) = (xi - xj, yi - yj);
                    if dx.abs() > r || dy.abs() > r {
                        continue;
                    }
                    let s = self.sigmas[j];
                    h += self.amplitudes[j] * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
                }
                h
            })
            .collect()
    }
}

/// Local maxima of the blurred frame rising above the local floor, refined
/// to sub-pixel precision. Peaks must clear both a fraction of the top peak
/// height and `NOISE_PEAK_SIGMAS × noise_std`.
pub fn detect_atoms(j: &ImageGray, cfg: &AtomFitConfig, noise_std: f64) -> Result<Vec<[f64; 2]>> {
    let q = gaussian_blur_2d(j, cfg.sigma_detect)?;
    let range = q.max() - q.min();
    if range <= ATOM_RANGE_THRESHOLD {
        return Err(Error::NoAtoms {
            score: range,
            threshold: ATOM_RANGE_THRESHOLD,
        });
    }
    let (w, h) = q.dims();
    let mx = max_filter(&q, 5);
    let floor = gaussian_blur_2d(&min_filter(&q, 31), 8.0)?;
    let mut cands = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = q.get(x, y);
            if v >= mx.get(x, y) {
                cands.push((x, y, v - floor.get(x, y)));
            }
        }
    }
    let heights: Vec<f64> = cands.iter().map(|c| c.2).collect();
    // noise maxima of the blurred frame stay below ~2.5 pixel-noise stds
    let top = quantile(&heights, 0.999);
    let floor_thr = NOISE_PEAK_SIGMAS * noise_std;
    let thr = (cfg.detect_threshold * top)
        .max(floor_thr)
        .max(ATOM_RANGE_THRESHOLD * 0.5);
    let mut taken = vec![false; w * h];
    let mut out = Vec::new();
    for &(x, y, ht) in &cands {
        if ht < thr {
            continue;
        }
        // plateaus yield several equal maxima; keep the first
        let near = (y.saturating_sub(2)..(y + 3).min(h))
            .any(|yy| (x.saturating_sub(2)..(x + 3).min(w)).any(|xx| taken[yy * w + xx]));
        if near {
            continue;
        }
        taken[y * w + x] = true;
        out.push([
            x as f64 + parabolic(&q, x, y, true),
            y as f64 + parabolic(&q, x, y, false),
        ]);
    }
    if out.is_empty() {
        return Err(Error::NoAtoms {
            score: range,
            threshold: ATOM_RANGE_THRESHOLD,
        });
    }
    Ok(out)
}

/// Robust pixel-noise std from the vertical second difference, which is
/// nearly blind to smooth structure.
pub fn pixel_noise_std(img: &ImageGray) -> f64 {
    let (w, h) = img.dims();
    if h < 3 {
        return 0.0;
    }
    let d = img.data();
    let dev: Vec<f64> = (w..w * (h - 1))
        .map(|i| (d[i] - 0.5 * (d[i - w] + d[i + w])).abs())
        .collect();
    1.4826 * quantile(&dev, 0.5) / 1.5f64.sqrt()
}

fn parabolic(q: &ImageGray, x: usize, y: usize, horizontal: bool) -> f64 {
    let (w, h) = q.dims();
    let (a, c) = if horizontal {
        if x == 0 || x + 1 >= w {
            return 0.0;
        }
        (q.get(x - 1, y), q.get(x + 1, y))
    } else {
        if y == 0 || y + 1 >= h {
            return 0.0;
        }
        (q.get(x, y - 1), q.get(x, y + 1))
    };
    let b = q.get(x, y);
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

/// Median nearest-neighbour distance (grid-bucketed search).
pub fn median_spacing(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let cell = 16.0;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(((p[0] / cell) as i64, (p[1] / cell) as i64))
            .or_default()
            .push(i);
    }
    let nn: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (cx, cy) = ((p[0] / cell) as i64, (p[1] / cell) as i64);
            let mut best = f64::INFINITY;
            let mut ring = 0;
            loop {
                for gy in cy - ring..=cy + ring {
                    for gx in cx - ring..=cx + ring {
                        if (gx - cx).abs() != ring && (gy - cy).abs() != ring {
                            continue;
                        }
                        for &j in grid.get(&(gx, gy)).into_iter().flatten() {
                            if j != i {
                                let d = (p[0] - pts[j][0]).hypot(p[1] - pts[j][1]);
                                best = best.min(d);
                            }
                        }
                    }
                }
                // anything outside ring r is at least r * cell away
                if best <= ring as f64 * cell || ring > 64 {
                    break;
                }
                ring += 1;
            }
            best
        })
        .collect();
    quantile(&nn, 0.5)
}

struct Window {
    x0: usize,
    y0: usize,
    w: usize,
    r2: Vec<f64>,
}

fn window(pos: [f64; 2], rw: usize, w: usize, h: usize) -> Window {
    let cx = pos[0].floor() as isize;
    let cy = pos[1].floor() as isize;
    let x0 = (cx - rw as isize).max(0) as usize;
    let y0 = (cy - rw as isize).max(0) as usize;
    let x1 = ((cx + rw as isize + 2).max(0) as usize).min(w);
    let y1 = ((cy + rw as isize + 2).max(0) as usize).min(h);
    let ww = x1.saturating_sub(x0);
    let mut r2 = Vec::with_capacity(ww * y1.saturating_sub(y0));
    for y in y0..y1 {
        for x in x0..x1 {
            r2.push((x as f64 - pos[0]).powi(2) + (y as f64 - pos[1]).powi(2));
        }
    }
    Window { x0, y0, w: ww, r2 }
}

fn splat(field: &mut ImageGray, pos: [f64; 2], sigma: f64, amp: f64) {
    if amp == 0.0 {
        return;
    }
    let (w, h) = field.dims();
    let rad = (4.0 * sigma).ceil() as isize;
    let (cx, cy) = (pos[0].round() as isize, pos[1].round() as isize);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in (cy - rad).max(0)..=(cy + rad).min(h as isize - 1) {
        let dy2 = (y as f64 - pos[1]).powi(2);
        let row = field.row_mut(y as usize);
        for x in (cx - rad).max(0)..=(cx + rad).min(w as isize - 1) {
            let d2 = (x as f64 - pos[0]).powi(2) + dy2;
            row[x as usize] += amp * (-d2 * inv).exp();
        }
    }
}

/// Least-squares amplitude of `a g + c` at width `sigma`, and the SSE
/// reduction over a constant fit. The free offset keeps the width from
/// trading off against background error.
fn score(win: &Window, t: &[f64], sigma: f64) -> (f64, f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let n = t.len() as f64;
    let (mut sg, mut sgg, mut st, mut sgt) = (0.0, 0.0, 0.0, 0.0);
    for (r2, tv) in win.r2.iter().zip(t) {
        let g = (-r2 * inv).exp();
        sg += g;
        sgg += g * g;
        st += tv;
        sgt += g * tv;
    }
    let var = sgg - sg * sg / n;
    let cov = sgt - sg * st / n;
    if var <= 1e-12 * sgg || cov <= 0.0 {
        return (0.0, 0.0);
    }
    (cov / var, cov * cov / var)
}

fn best_sigma(win: &Window, t: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    const GRID: usize = 10;
    let ratio = (hi / lo).powf(1.0 / (GRID - 1) as f64);
    let sig: Vec<f64> = (0..GRID).map(|i| lo * ratio.powi(i as i32)).collect();
    let scores: Vec<f64> = sig.iter().map(|&s| score(win, t, s).1).collect();
    let bi = (0..GRID).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0);
    if scores[bi] <= 0.0 {
        return (sig[GRID / 2], 0.0);
    }
    // golden-section in log sigma between the neighbouring grid points
    let mut a = sig[bi.saturating_sub(1)].ln();
    let mut b = sig[(bi + 1).min(GRID - 1)].ln();
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |ls: f64| score(win, t, ls.exp()).1;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..14 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let s = (0.5 * (a + b)).exp();
    (s, score(win, t, s).0)
}

/// Detects atoms in `j` (atoms bright) and fits amplitudes, widths and a
/// smooth background by coordinate descent.
///
/// A first pass with only the relative detection threshold gives a model
/// whose residual measures the pixel noise; detection is then repeated with
/// the noise floor and the model refitted.
pub fn fit_atoms(j: &ImageGray, cfg: &AtomFitConfig) -> Result<AtomModel> {
    let first = fit_positions(j, detect_atoms(j, cfg, 0.0)?, cfg, 2)?;
    let t = first.significance(first.noise_std);
    // pure noise yields candidates up to t of about 7
    let strongest = t.iter().copied().fold(0.0, f64::max);
    if strongest < FRAME_SIGNIFICANCE {
        return Err(Error::NoAtoms {
            score: strongest,
            threshold: FRAME_SIGNIFICANCE,
        });
    }
    let positions: Vec<[f64; 2]> = first
        .positions
        .iter()
        .zip(&t)
        .filter(|(_, &t)| t >= MIN_SIGNIFICANCE)
        .map(|(p, _)| *p)
        .collect();
    let mut model = fit_positions(j, positions, cfg, cfg.iterations.max(1))?;
    // atoms merged with a neighbour by the detection blur show up in the residual
    for _ in 0..2 {
        let extra = residual_peaks(j, &model, cfg)?;
        if extra.is_empty() {
            break;
        }
        let mut positions = model.positions.clone();
        positions.extend(extra);
        model = fit_positions(j, positions, cfg, cfg.iterations.max(1))?;
    }
    Ok(model)
}

/// Significant unexplained peaks of the residual, away from fitted atoms.
fn residual_peaks(j: &ImageGray, model: &AtomModel, cfg: &AtomFitConfig) -> Result<Vec<[f64; 2]>> {
    let resid = j.sub(&model.clean())?;
    let q = gaussian_blur_2d(&resid, cfg.sigma_detect)?;
    let mx = max_filter(&q, 5);
    let (w, h) = q.dims();
    let sigma = quantile(&model.sigmas, 0.5);
    let rw = ((model.spacing / 2.0).floor() as usize).max(2);
    let min_sep = sigma.max(0.4 * model.spacing).max(1.0);
    let mut out: Vec<[f64; 2]> = Vec::new();
    let mut t = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = q.get(x, y);
            if v <= 0.0 || v < mx.get(x, y) {
                continue;
            }
            let p = [
                x as f64 + parabolic(&q, x, y, true),
                y as f64 + parabolic(&q, x, y, false),
            ];
            let near = |a: &[f64; 2]| (a[0] - p[0]).hypot(a[1] - p[1]) < min_sep;
            if model.positions.iter().any(near) || out.iter().any(near) {
                continue;
            }
            let win = window(p, rw, w, h);
            t.clear();
            for yy in win.y0..win.y0 + win.r2.len() / win.w.max(1) {
                t.extend_from_slice(&resid.row(yy)[win.x0..win.x0 + win.w]);
            }
            let (a, _) = score(&win, &t, sigma);
            let inv = 1.0 / (2.0 * sigma * sigma);
            let n = win.r2.len() as f64;
            let (mut sg, mut sgg) = (0.0, 0.0);
            for r2 in &win.r2 {
                let g = (-r2 * inv).exp();
                sg += g;
                sgg += g * g;
            }
            let spread = (sgg - sg * sg / n).max(0.0).sqrt();
            if a * spread / model.noise_std.max(1e-9) >= RESIDUAL_SIGNIFICANCE {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// Smooth part of `j - field`. Pixels are down-weighted near atom cores,
/// where column misfit concentrates, and where the locally averaged residual
/// against `prev` is an outlier (columns the model missed, mostly at the
/// frame edge).
fn smooth_background(
    j: &ImageGray,
    field: &ImageGray,
    prev: &ImageGray,
    amps: &[f64],
    sigma: f64,
) -> Result<ImageGray> {
    let tau = (0.1 * quantile(amps, 0.5)).max(1e-6);
    let resid = j.sub(field)?;
    let local = gaussian_blur_2d(&resid.sub(prev)?, 1.5)?;
    let dev: Vec<f64> = local.data().iter().map(|v| v.abs()).collect();
    let scale = (3.0 * 1.4826 * quantile(&dev, 0.5)).max(1e-6);
    let wt = ImageGray::from_fn(j.width(), j.height(), |x, y| {
        let (f, l) = (field.get(x, y) / tau, local.get(x, y) / scale);
        1.0 / ((1.0 + f * f) * (1.0 + l * l))
    });
    let num = gaussian_blur_2d(&resid.zip_map(&wt, |r, w| r * w)?, sigma)?;
    let den = gaussian_blur_2d(&wt, sigma)?;
    num.zip_map(&den, |n, d| n / d.max(1e-12))
}

fn fit_positions(j: &ImageGray, positions: Vec<[f64; 2]>, cfg: &AtomFitConfig, iterations: usize) -> Result<AtomModel> {
    let (w, h) = j.dims();
    let spacing = if positions.len() >= 2 {
        median_spacing(&positions)
    } else {
        w.min(h) as f64 / 2.0
    };
    let rw = ((spacing / 2.0).floor() as usize).max(2);
    let (s_lo, s_hi) = (0.5, (0.5 * spacing).max(1.0));
    let n = positions.len();
    let mut sigmas = vec![(spacing / 5.0).clamp(s_lo, s_hi); n];
    let mut amps = vec![0.0; n];
    let mut field = ImageGray::zeros(w, h);
    let q = gaussian_blur_2d(j, cfg.sigma_detect)?;
    let open = min_filter(&q, 2 * (spacing.ceil() as usize).min(w.min(h) / 2) + 1);
    let mut background = gaussian_blur_2d(&open, cfg.sigma_background)?;
    let windows: Vec<Window> = positions.iter().map(|&p| window(p, rw, w, h)).collect();
    let mut t = Vec::new();
    for _ in 0..iterations {
        for i in 0..n {
            splat(&mut field, positions[i], sigmas[i], -amps[i]);
            let win = &windows[i];
            t.clear();
            let rows = win.r2.len() / win.w.max(1);
            for yy in 0..rows {
                let y = win.y0 + yy;
                let (jr, br, fr) = (j.row(y), background.row(y), field.row(y));
                for x in win.x0..win.x0 + win.w {
                    t.push(jr[x] - br[x] - fr[x]);
                }
            }
            let (s, a) = best_sigma(win, &t, s_lo, s_hi);
            sigmas[i] = s;
            amps[i] = a;
            splat(&mut field, positions[i], s, a);
        }
        background = smooth_background(j, &field, &background, &amps, cfg.sigma_background)?;
    }
    let mut model = AtomModel {
        positions,
        sigmas,
        amplitudes: amps,
        field,
        background,
        spacing,
        noise_std: 0.0,
    };
    model.noise_std = pixel_noise_std(&j.sub(&model.clean())?);
    Ok(model)
}
