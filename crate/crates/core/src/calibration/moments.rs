//! Noise parameter estimation from the residual against a fitted clean model.
//!
//! A vertical second difference of the residual cancels smooth model error
//! while keeping both noise types (they are independent between rows), with
//! weights `(-0.5, 1, -0.5)`. Scan variance is read from products of
//! horizontally neighbouring differences, which pointwise noise cannot
//! produce; pointwise variance is what remains of the squared difference.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::binning::{fit_moments, moment_std, ols, r_squared, BinStat, Bins, MomentBins};
use super::ppcc::{lambda_grid, PpccCurve, ProbPlot, DEFAULT_PPCC_SAMPLES};
use crate::error::{Error, Result};
use crate::image::{convolve_rows, gaussian_kernel, ImageGray};
use crate::noise::{scan_unit_field, scan_unit_row, TukeySampler};
use crate::rng::SeededRng;

/// Squared second-difference weights and their sum.
const C2: [f64; 3] = [0.25, 1.0, 0.25];
const C2_SUM: f64 = 1.5;
/// Fits with R² below this are flagged.
pub const LOW_R2: f64 = 0.5;

/// One linear std model fit with its binned evidence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub k: f64,
    pub b: f64,
    /// Plain least-squares line through the bin stds (starting point).
    pub k_ols: f64,
    pub b_ols: f64,
    pub r2_ols: Option<f64>,
    pub r2_model: Option<f64>,
    pub bins: Vec<BinStat>,
    pub discarded: Vec<usize>,
    pub low_r2: bool,
}

impl FitDiagnostics {
    fn set_params(&mut self, k: f64, b: f64) {
        self.k = k;
        self.b = b;
    }
}

/// Shape estimate and its correction for scan-noise admixture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LambdaDiagnostics {
    /// PPCC optimum of the standardized residual.
    pub raw: f64,
    pub correlation: f64,
    /// Estimate after inverting the simulated raw-vs-true map.
    pub corrected: f64,
    pub ppcc: PpccCurve,
    /// `(true λ, simulated raw λ)` pairs.
    pub inversion: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub(crate) struct MomentSettings {
    pub sigma_row: f64,
    pub n_bins: usize,
    pub min_bin_frac: f64,
    pub saturation_frac: f64,
    pub lambda: (f64, f64, f64),
    pub inversion_step: f64,
    pub invert_lambda: bool,
    pub sim_seed: u64,
}

pub(crate) struct NoiseEstimate {
    pub scan: FitDiagnostics,
    pub pointwise: FitDiagnostics,
    pub lambda: LambdaDiagnostics,
    pub valid_pixels: usize,
    pub clipped_pixels: usize,
    pub saturated_bins: usize,
}

type AutocorrCache = Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>;

/// Mean row autocorrelation of the unit scan signal at lags `0..=max_lag`.
pub fn scan_autocorrelation(width: usize, max_lag: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<AutocorrCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().expect("cache lock").get(&(width, max_lag)) {
        return v.clone();
    }
    let rows = (400_000 / width.max(1)).clamp(200, 4000);
    let mut rng = SeededRng::new(0xac0f);
    let mut acc = vec![0.0; max_lag + 1];
    for _ in 0..rows {
        let u = scan_unit_row(&mut rng, width);
        for (j, a) in acc.iter_mut().enumerate() {
            if j >= width {
                break;
            }
            let s: f64 = (0..width - j).map(|x| u[x] * u[x + j]).sum();
            *a += s / (width - j) as f64;
        }
    }
    let rho: Arc<Vec<f64>> = Arc::new(acc.iter().map(|a| a / rows as f64).collect());
    cache.lock().expect("cache lock").insert((width, max_lag), rho.clone());
    rho
}

/// Row Gaussian with the centre tap removed and the rest renormalized.
pub(crate) fn leave_centre_out(sigma: f64) -> Result<Vec<f64>> {
    let mut k = gaussian_kernel(sigma)?;
    let c = k.len() / 2;
    k[c] = 0.0;
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

fn bin_diagnostics(bins: &Bins, kept: &[bool], target: &[f64], m: &MomentBins, k: f64, b: f64) -> Vec<BinStat> {
    (0..bins.n)
        .map(|i| {
            let (lo, hi) = bins.edges(i);
            let c = bins.counts[i];
            BinStat {
                lo,
                hi,
                count: c,
                std: if c > 0 { target[i].max(0.0).sqrt() } else { 0.0 },
                model_std: if c > 0 { moment_std(m, i, k, b) } else { 0.0 },
                kept: kept[i],
            }
        })
        .collect()
}

/// Bins `x`, averages the per-pixel variance estimates and model terms, and
/// fits `(k, b)`.
fn moment_fit(
    x: &[f64],
    est: &[f64],
    a2: &[f64],
    a1: &[f64],
    n_bins: usize,
    min_frac: f64,
    min_bins: usize,
) -> Result<FitDiagnostics> {
    let bins = Bins::new(x, n_bins)?;
    let kept = bins.kept(min_frac);
    let surviving = kept.iter().filter(|&&k| k).count();
    if surviving < min_bins {
        return Err(Error::InsufficientGradient { surviving });
    }
    let all = MomentBins {
        target: bins.means(est),
        a2: bins.means(a2),
        a1: bins.means(a1),
        a0: vec![1.0; bins.n],
        weight: bins.counts.iter().map(|&c| c as f64).collect(),
    };
    let idx: Vec<usize> = (0..bins.n).filter(|&i| kept[i]).collect();
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let fitm = MomentBins {
        target: pick(&all.target),
        a2: pick(&all.a2),
        a1: pick(&all.a1),
        a0: pick(&all.a0),
        weight: pick(&all.weight),
    };
    let centres: Vec<f64> = idx.iter().map(|&i| bins.center(i)).collect();
    let stds: Vec<f64> = fitm.target.iter().map(|t| t.max(0.0).sqrt()).collect();
    let (k0, b0, r2_ols) = ols(&centres, &stds)?;
    let (k, b) = fit_moments(&fitm, k0.max(1e-4), b0.max(0.1));
    let model: Vec<f64> = (0..idx.len()).map(|i| moment_std(&fitm, i, k, b)).collect();
    let r2_model = r_squared(&stds, &model);
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok(FitDiagnostics {
        k,
        b,
        k_ols: k0,
        b_ols: b0,
        r2_ols: finite(r2_ols),
        r2_model: finite(r2_model),
        bins: bin_diagnostics(&bins, &kept, &all.target, &all, k, b),
        discarded: (0..bins.n).filter(|&i| !kept[i]).collect(),
        low_r2: !(r2_model >= LOW_R2),
    })
}

/// Per-pixel weighted least squares of `est ≈ k² a2 + k b a1 + b²` in the
/// variance domain, by Gauss-Newton from `(k, b)`.
fn wls_moments(est: &[f64], a2: &[f64], a1: &[f64], wt: &[f64], mut k: f64, mut b: f64) -> (f64, f64) {
    let cost = |k: f64, b: f64| -> f64 {
        (0..est.len())
            .map(|i| wt[i] * (est[i] - (k * k * a2[i] + k * b * a1[i] + b * b)).powi(2))
            .sum()
    };
    let mut c = cost(k, b);
    for _ in 0..50 {
        let (mut h, mut g) = ([0.0; 3], [0.0; 2]);
        for i in 0..est.len() {
            let r = est[i] - (k * k * a2[i] + k * b * a1[i] + b * b);
            let jk = 2.0 * k * a2[i] + b * a1[i];
            let jb = k * a1[i] + 2.0 * b;
            h[0] += wt[i] * jk * jk;
            h[1] += wt[i] * jk * jb;
            h[2] += wt[i] * jb * jb;
            g[0] += wt[i] * jk * r;
            g[1] += wt[i] * jb * r;
        }
        let det = h[0] * h[2] - h[1] * h[1];
        if !(det.abs() > 1e-300) {
            break;
        }
        let dk = (h[2] * g[0] - h[1] * g[1]) / det;
        let db = (h[0] * g[1] - h[1] * g[0]) / det;
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-4 {
            let (nk, nb) = (k + step * dk, b + step * db);
            let nc = cost(nk, nb);
            if nc <= c {
                (k, b, c) = (nk, nb, nc);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || (step * dk).abs() < 1e-9 && (step * db).abs() < 1e-9 {
            break;
        }
    }
    (k, b)
}

fn invert_monotone(map: &[[f64; 2]], raw: f64) -> f64 {
    // enforce a non-decreasing raw(true) curve before inverting
    let mut pts: Vec<[f64; 2]> = map.to_vec();
    for i in 1..pts.len() {
        pts[i][1] = pts[i][1].max(pts[i - 1][1]);
    }
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if raw <= first[1] {
        return first[0] + (raw - first[1]);
    }
    if raw >= last[1] {
        return last[0] + (raw - last[1]);
    }
    for w in pts.windows(2) {
        let ([l0, r0], [l1, r1]) = (w[0], w[1]);
        if raw >= r0 && raw <= r1 {
            return if r1 > r0 {
                l0 + (raw - r0) / (r1 - r0) * (l1 - l0)
            } else {
                0.5 * (l0 + l1)
            };
        }
    }
    raw
}

/// Clip points below which a pixel is left out of the moment fits, and
/// below which it is left out of the shape fit, in noise sigmas.
const MIN_CENSOR_DEPTH: f64 = 1.0;
const SHAPE_DEPTH: f64 = 3.0;

/// Variance of a unit normal censored at `±a` (one bound at `a`, the other
/// far away), relative to the uncensored variance.
fn censored_variance(a: f64) -> f64 {
    if a > 8.0 {
        return 1.0;
    }
    let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let tail = 0.5 * libm::erfc(a / std::f64::consts::SQRT_2);
    let second = 1.0 - (tail + a * phi) + a * a * tail;
    let mean = phi - a * tail;
    (second - mean * mean).clamp(0.05, 1.0)
}

/// Per-frame quantities shared by both passes of the moment fits.
struct MomentContext<'a> {
    w: usize,
    g: &'a [f64],
    vd: &'a [f64],
    gs: Vec<f64>,
    d: Vec<f64>,
    m: Vec<f64>,
    rho_bar: f64,
}

impl<'a> MomentContext<'a> {
    fn new(resid: &ImageGray, grad: &'a ImageGray, value: &'a ImageGray, kern: &[f64]) -> Result<Self> {
        let (w, h) = resid.dims();
        let r = kern.len() / 2;
        // second difference D and its leave-centre-out row average M
        let rd = resid.data();
        let mut d = ImageGray::zeros(w, h);
        for y in 1..h - 1 {
            for x in 0..w {
                d.set(x, y, rd[y * w + x] - 0.5 * (rd[(y - 1) * w + x] + rd[(y + 1) * w + x]));
            }
        }
        let m = convolve_rows(&d, kern);
        let rho = scan_autocorrelation(w, r);
        let wr: Vec<f64> = kern.iter().enumerate().map(|(i, k)| k * rho[i.abs_diff(r)]).collect();
        let rho_bar: f64 = wr.iter().sum();
        if !(rho_bar > 0.05) {
            return Err(Error::Numerical(format!("scan autocorrelation too weak ({rho_bar})")));
        }
        let gs = convolve_rows(grad, &wr.iter().map(|v| v / rho_bar).collect::<Vec<_>>());
        Ok(Self {
            w,
            g: grad.data(),
            vd: value.data(),
            gs: gs.into_data(),
            d: d.into_data(),
            m: m.into_data(),
            rho_bar,
        })
    }

    /// Distance of each model value to the nearer clip bound, in total
    /// noise sigmas.
    fn censor_depth(&self, sk: f64, sb: f64, pk: f64, pb: f64) -> Vec<f64> {
        (0..self.g.len())
            .map(|i| {
                let v = self.vd[i];
                let var = (sk.max(0.0) * self.g[i] + sb.max(0.0)).powi(2) + (pk * v + pb).max(0.0).powi(2);
                v.min(255.0 - v) / var.sqrt().max(1e-6)
            })
            .collect()
    }

    /// Scan then pointwise `(k, b)` on `idx`, with each pixel's variance
    /// estimates divided by `factor`.
    fn fit(&self, idx: &[usize], factor: &[f64], s: &MomentSettings) -> Result<(FitDiagnostics, FitDiagnostics)> {
        let (w, g, gsd, vd, d) = (self.w, self.g, &self.gs, self.vd, &self.d);
        let n = idx.len();
        let (mut xs, mut es, mut a2, mut a1) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for &i in idx {
            xs.push(g[i]);
            es.push(d[i] * self.m[i] / (C2_SUM * self.rho_bar) / factor[i]);
            let (mut s2, mut s1) = (0.0, 0.0);
            for (c, o) in C2.iter().zip([i - w, i, i + w]) {
                s2 += c * g[o] * gsd[o];
                s1 += c * (g[o] + gsd[o]);
            }
            a2.push(s2 / C2_SUM);
            a1.push(s1 / C2_SUM);
        }
        let mut scan = moment_fit(&xs, &es, &a2, &a1, s.n_bins, s.min_bin_frac, 3)?;
        let scan_px = (es, a2, a1);

        let pw_terms = |sk: f64, sb: f64| {
            let (mut xs, mut es, mut a2, mut a1) = (
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
            );
            for &i in idx {
                xs.push(vd[i]);
                let (mut ss, mut s2, mut s1) = (0.0, 0.0, 0.0);
                for (c, o) in C2.iter().zip([i - w, i, i + w]) {
                    ss += c * (sk.max(0.0) * g[o] + sb.max(0.0)).powi(2);
                    s2 += c * vd[o] * vd[o];
                    s1 += c * 2.0 * vd[o];
                }
                es.push((d[i].powi(2) / factor[i] - ss) / C2_SUM);
                a2.push(s2 / C2_SUM);
                a1.push(s1 / C2_SUM);
            }
            (xs, es, a2, a1)
        };
        let (xs, es, a2, a1) = pw_terms(scan.k, scan.b);
        let mut pointwise = moment_fit(&xs, &es, &a2, &a1, s.n_bins, s.min_bin_frac, 2)?;

        // refine both with per-pixel weights 1 / σ_tot⁴ (the estimates'
        // variance grows with the square of the local total variance)
        let weights = |sk: f64, sb: f64, pk: f64, pb: f64| -> Vec<f64> {
            idx.iter()
                .map(|&i| {
                    let v = (sk.max(0.0) * g[i] + sb.max(0.0)).powi(2) + (pk * vd[i] + pb).max(0.0).powi(2);
                    1.0 / v.max(1e-6).powi(2)
                })
                .collect()
        };
        let wt = weights(scan.k, scan.b, pointwise.k, pointwise.b);
        let (sk, sb) = wls_moments(&scan_px.0, &scan_px.1, &scan_px.2, &wt, scan.k, scan.b.max(0.1));
        let (_, es, a2, a1) = pw_terms(sk, sb);
        let wt = weights(sk, sb, pointwise.k, pointwise.b);
        let (pk, pb) = wls_moments(&es, &a2, &a1, &wt, pointwise.k, pointwise.b.max(0.1));
        scan.set_params(sk, sb);
        pointwise.set_params(pk, pb);
        Ok((scan, pointwise))
    }
}

/// `j`: frame in atoms-bright polarity; `clean`: fitted model in the same
/// polarity; `value`: model in image polarity; `img`: raw frame.
pub(crate) fn estimate_noise(
    img: &ImageGray,
    j: &ImageGray,
    clean: &ImageGray,
    value: &ImageGray,
    grad: &ImageGray,
    s: &MomentSettings,
) -> Result<NoiseEstimate> {
    let (w, h) = img.dims();
    let kern = leave_centre_out(s.sigma_row)?;
    let r = kern.len() / 2;
    if w <= 2 * r + 2 || h < 4 {
        return Err(Error::param(format!("image {w}x{h} too small for noise estimation")));
    }
    let resid = j.sub(clean)?;

    // pass 1: drop model-value bins that clip noticeably and every stencil
    // touching a clipped pixel
    let clipped: Vec<bool> = img.data().iter().map(|&v| v <= 0.5 || v >= 254.5).collect();
    let clipped_pixels = clipped.iter().filter(|&&c| c).count();
    let vbins = Bins::new(value.data(), 32)?;
    let mut vclip = vec![0usize; vbins.n];
    for (i, &c) in clipped.iter().enumerate() {
        if c {
            vclip[vbins.idx[i]] += 1;
        }
    }
    let bad_bin: Vec<bool> = (0..vbins.n)
        .map(|b| vclip[b] as f64 > s.saturation_frac * vbins.counts[b] as f64)
        .collect();
    let saturated_bins = bad_bin.iter().filter(|&&b| b).count();
    let interior = |i: usize| {
        let (x, y) = (i % w, i / w);
        y >= 1 && y + 1 < h && x >= r && x + r < w
    };
    let first: Vec<usize> = (0..w * h)
        .filter(|&i| interior(i) && !(bad_bin[vbins.idx[i]] || clipped[i - w] || clipped[i] || clipped[i + w]))
        .collect();
    if first.len() < 100 {
        return Err(Error::Fit(format!(
            "only {} usable pixels after saturation masking",
            first.len()
        )));
    }

    let ctx = MomentContext::new(&resid, grad, value, &kern)?;
    let (mut scan, mut pointwise) = ctx.fit(&first, &vec![1.0; w * h], s)?;
    let mut valid_pixels = first.len();
    let mut valid_idx = first;

    // pass 2: keep clipped pixels and undo the variance lost to censoring,
    // given each pixel's distance to the clip bounds in noise sigmas
    if clipped_pixels > 0 {
        let depth = ctx.censor_depth(scan.k, scan.b, pointwise.k, pointwise.b);
        let second: Vec<usize> = (0..w * h)
            .filter(|&i| interior(i) && [i - w, i, i + w].iter().all(|&o| depth[o] >= MIN_CENSOR_DEPTH))
            .collect();
        if second.len() > valid_idx.len() {
            let factor: Vec<f64> = (0..w * h)
                .map(|i| {
                    if interior(i) {
                        censored_variance(depth[i - w].min(depth[i]).min(depth[i + w]))
                    } else {
                        1.0
                    }
                })
                .collect();
            (scan, pointwise) = ctx.fit(&second, &factor, s)?;
            valid_pixels = second.len();
            // the shape fit needs uncensored tails
            let deep: Vec<usize> = second.into_iter().filter(|&i| depth[i] >= SHAPE_DEPTH).collect();
            if deep.len() >= valid_idx.len() {
                valid_idx = deep;
            }
        }
    }

    let (rd, g, vd) = (resid.data(), grad.data(), value.data());
    let (sk, sb, pk, pb) = (scan.k.max(0.0), scan.b.max(0.0), pointwise.k, pointwise.b);
    let sig_s = |o: usize| sk * g[o] + sb;

    // shape: PPCC of the residual standardized by the fitted total sigma
    let sig_tot: Vec<f64> = valid_idx
        .iter()
        .map(|&i| (sig_s(i).powi(2) + (pk * vd[i] + pb).max(0.0).powi(2)).sqrt().max(1e-6))
        .collect();
    let z: Vec<f64> = valid_idx.iter().zip(&sig_tot).map(|(&i, st)| rd[i] / st).collect();
    let grid = lambda_grid(s.lambda.0, s.lambda.1, s.lambda.2)?;
    let plot = ProbPlot::new(&z, DEFAULT_PPCC_SAMPLES)?;
    let ppcc = plot.curve(&grid);
    let (raw, correlation) = ppcc.best();

    let mut inversion = Vec::new();
    let mut corrected = raw;
    if s.invert_lambda {
        let mut rng = SeededRng::new(s.sim_seed);
        let unit = scan_unit_field(&mut rng, w, h);
        let u: Vec<f64> = (0..w * h).map(|_| rng.uniform_open()).collect();
        let steps = ((s.lambda.1 - s.lambda.0) / s.inversion_step + 1e-9).floor() as usize;
        for t in 0..=steps {
            let lt = s.lambda.0 + t as f64 * s.inversion_step;
            let ts = TukeySampler::new(lt)?;
            let zs: Vec<f64> = valid_idx
                .iter()
                .zip(&sig_tot)
                .map(|(&i, st)| {
                    let p = (pk * vd[i] + pb).max(0.0) * ts.unit_from_uniform(u[i]);
                    (sig_s(i) * unit.data()[i] + p) / st
                })
                .collect();
            let sim = ProbPlot::new(&zs, DEFAULT_PPCC_SAMPLES)?.argmax(&grid).0;
            inversion.push([lt, sim]);
        }
        corrected = invert_monotone(&inversion, raw).clamp(s.lambda.0, s.lambda.1);
    }
    Ok(NoiseEstimate {
        scan,
        pointwise,
        lambda: LambdaDiagnostics {
            raw,
            correlation,
            corrected,
            ppcc,
            inversion,
        },
        valid_pixels,
        clipped_pixels,
        saturated_bins,
    })
}
