//! Estimates every noise-model parameter from atom-bearing frames.
//!
//! [`calibrate_image`] fits a parametric clean model (Gaussian columns plus a
//! smooth background), then reads scan and pointwise noise statistics off the
//! residual. The simpler blur-difference operations ([`extract_scan_noise`],
//! [`fit_scan_noise`], [`extract_pointwise_noise`], [`fit_pointwise`]) are
//! exposed for inspection and for noise maps whose clean image is known.

mod atoms;
mod binning;
mod moments;
mod pointwise;
pub mod ppcc;
mod scan;
mod stats;

use serde::{Deserialize, Serialize};

pub use self::atoms::{
    detect_atoms, fit_atoms, median_spacing, pixel_noise_std, AtomFitConfig, AtomModel, ATOM_RANGE_THRESHOLD,
    FRAME_SIGNIFICANCE, MIN_SIGNIFICANCE,
};
pub use self::binning::{ols, r_squared, BinStat};
pub use self::moments::{scan_autocorrelation, FitDiagnostics, LambdaDiagnostics, LOW_R2};
pub use self::pointwise::{extract_pointwise_noise, fit_pointwise, row_residual_variance_factor, PointwiseFit};
pub use self::ppcc::{lambda_grid, ppcc_curve, ppcc_fit, PpccCurve};
pub use self::scan::{estimate_clean, extract_scan_noise, fit_scan_noise, BinnedFit};
pub use self::stats::{aggregate, ParamSet, ProfileStats};

use self::binning::quantile;
use self::moments::{estimate_noise, MomentSettings};
use crate::error::{Error, Result, StageExt};
use crate::image::{gaussian_blur_2d, gradient_magnitude, BitDepth, ImageGray};
use crate::noise::{BackgroundParams, Mode, NoiseProfile, PointwiseParams, ScanNoiseParams, DEFAULT_BG_LATTICE};

/// Tunables for [`calibrate_image`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub sigma_detect: f64,
    pub detect_threshold: f64,
    pub fit_iterations: usize,
    /// Background smoothing scale; the background blur sigma is `patch / 8`.
    pub patch: usize,
    pub sigma_row: f64,
    /// Blur of [`estimate_clean`]; used only by the blur-difference maps.
    pub sigma2d: f64,
    pub n_bins: usize,
    pub min_bin_frac: f64,
    /// A value bin is masked when more than this fraction of it is clipped.
    pub saturation_frac: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_step: f64,
    pub invert_lambda: bool,
    pub inversion_step: f64,
    pub sim_seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            sigma_detect: 1.5,
            detect_threshold: 0.2,
            fit_iterations: 4,
            patch: 64,
            sigma_row: 2.0,
            sigma2d: 5.0,
            n_bins: 32,
            min_bin_frac: 0.005,
            saturation_frac: 0.001,
            lambda_min: -0.3,
            lambda_max: 0.8,
            lambda_step: 0.01,
            invert_lambda: true,
            inversion_step: 0.1,
            sim_seed: 0x5eed,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("sigma_detect", self.sigma_detect),
            ("sigma_row", self.sigma_row),
            ("sigma2d", self.sigma2d),
            ("lambda_step", self.lambda_step),
            ("inversion_step", self.inversion_step),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.patch < 8 {
            return Err(Error::param(format!("patch must be at least 8, got {}", self.patch)));
        }
        if self.n_bins < 3 {
            return Err(Error::param("n_bins must be at least 3"));
        }
        if !(0.0..1.0).contains(&self.min_bin_frac) || !(0.0..1.0).contains(&self.saturation_frac) {
            return Err(Error::param("bin fractions must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.detect_threshold) {
            return Err(Error::param("detect_threshold must lie in [0, 1)"));
        }
        lambda_grid(self.lambda_min, self.lambda_max, self.lambda_step)?;
        Ok(())
    }

    pub fn atom_fit(&self) -> AtomFitConfig {
        AtomFitConfig {
            sigma_detect: self.sigma_detect,
            detect_threshold: self.detect_threshold,
            sigma_background: self.patch as f64 / 8.0,
            iterations: self.fit_iterations,
        }
    }
}

/// Atom brightness: `b_atom = |b_central − b_background|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomBrightness {
    pub b_atom: f64,
    pub b_central: f64,
    pub b_background: f64,
}

/// Blur scales used by one calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurSigmas {
    pub detect: f64,
    pub row: f64,
    pub background: f64,
    pub clean_proxy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomDiagnostics {
    pub count: usize,
    pub spacing: f64,
    pub mean_sigma: f64,
    /// Atoms in the brightest cluster that set `b_atom`.
    pub cluster_size: usize,
    pub b_central: f64,
    pub b_background: f64,
}

/// Everything needed to audit one calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub width: usize,
    pub height: usize,
    pub bit_depth: Option<BitDepth>,
    pub version: String,
    pub sigmas: BlurSigmas,
    pub atoms: AtomDiagnostics,
    /// Pixels used by the noise fits; bin counts of both fits sum to this.
    pub valid_pixels: usize,
    /// Border, clipped and saturation-masked pixels.
    pub excluded_pixels: usize,
    pub clipped_pixels: usize,
    pub saturated_bins: usize,
    pub scan: FitDiagnostics,
    pub pointwise: FitDiagnostics,
    pub lambda: LambdaDiagnostics,
    /// Result of [`detect_polarity`]; informational only.
    pub polarity_check: Mode,
    pub warnings: Vec<String>,
}

/// Per-image calibration result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub source: String,
    pub profile: NoiseProfile,
    pub diagnostics: Diagnostics,
}

/// Frame in "atoms bright" polarity.
fn atoms_bright(img: &ImageGray, mode: Mode) -> ImageGray {
    match mode {
        Mode::Haadf => img.clone(),
        Mode::Bf => img.map(|v| 255.0 - v),
    }
}

fn to_image_polarity(v: f64, mode: Mode) -> f64 {
    match mode {
        Mode::Haadf => v,
        Mode::Bf => 255.0 - v,
    }
}

/// Brightest mode of the centre heights: a median-shift that starts at the
/// 95th percentile and settles on the nearest density peak. Taking a plain
/// upper quantile would select atoms whose noise happened to be positive.
fn brightest_mode(heights: &[f64], bandwidth: impl Fn(f64) -> f64) -> (f64, usize) {
    let mut m = quantile(heights, 0.95);
    let mut count = 0;
    for _ in 0..100 {
        let bw = bandwidth(m);
        let near: Vec<f64> = heights.iter().copied().filter(|h| (h - m).abs() <= bw).collect();
        if near.is_empty() {
            break;
        }
        let next = quantile(&near, 0.5);
        count = near.len();
        if (next - m).abs() < 1e-6 * m.abs().max(1.0) {
            m = next;
            break;
        }
        m = next;
    }
    (m, count)
}

/// Standard errors by which a height must clear the brightest mode before
/// it counts as a distinct peak.
const PEAK_GATE: f64 = 4.0;

/// Peak of the clean atom field. The brightest mode stands in for it unless
/// some atoms (overlapping neighbours, a brighter species) clearly exceed
/// it. Each height is first rescaled by the local data-to-model gain, so a
/// crowded fit that overshoots the data cannot set the peak.
fn peak_height(j: &ImageGray, model: &AtomModel, heights: &[f64], se: &[f64], b_mode: f64, bw: f64) -> f64 {
    let (w, h) = j.dims();
    let (jd, fd, bd) = (j.data(), model.field.data(), model.background.data());
    let checked: Vec<f64> = (0..heights.len())
        .map(|i| {
            let [cx, cy] = model.positions[i];
            let s = model.sigmas[i].max(0.5);
            let r = (2.0 * s).ceil() as isize;
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (cx.round() as isize + dx, cy.round() as isize + dy);
                    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                        continue;
                    }
                    let p = y as usize * w + x as usize;
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let g = (-d2 / (2.0 * s * s)).exp();
                    num += g * (jd[p] - bd[p]);
                    den += g * fd[p];
                }
            }
            if den > 0.0 {
                heights[i] * num / den
            } else {
                heights[i]
            }
        })
        .collect();
    let dev: Vec<f64> = checked
        .iter()
        .zip(heights)
        .filter(|(_, ht)| (*ht - b_mode).abs() <= bw)
        .map(|(c, _)| (c - b_mode).abs())
        .collect();
    let spread = 1.4826 * quantile(&dev, 0.5);
    let sig_med = quantile(&model.sigmas, 0.5);
    let mut peak = b_mode;
    for (i, &c) in checked.iter().enumerate() {
        let [x, y] = model.positions[i];
        let edge = (2.0 * model.sigmas[i]).max(3.0);
        let inside = x >= edge && y >= edge && x <= (w - 1) as f64 - edge && y <= (h - 1) as f64 - edge;
        if inside && model.sigmas[i] >= 0.5 * sig_med && c - b_mode > PEAK_GATE * se[i].max(spread) {
            peak = peak.max(c);
        }
    }
    peak
}

/// Brightness from a fitted model, plus the size of the brightest cluster.
fn brightness_of(j: &ImageGray, model: &AtomModel, mode: Mode) -> Result<(AtomBrightness, usize)> {
    let heights = model.centre_heights();
    if !(quantile(&heights, 0.95) > 0.0) {
        return Err(Error::NoAtoms {
            score: 0.0,
            threshold: ATOM_RANGE_THRESHOLD,
        });
    }
    let se: Vec<f64> = (0..heights.len())
        .map(|i| model.noise_std / model.template_spread(i).max(1e-9))
        .collect();
    let se_med = quantile(&se, 0.5);
    let (b_mode, cluster) = brightest_mode(&heights, |m| (3.0 * se_med).max(0.08 * m));
    let bw = (3.0 * se_med).max(0.08 * b_mode);
    let (w, h) = model.background.dims();
    let b_atom = peak_height(j, model, &heights, &se, b_mode, bw);
    let under: Vec<f64> = heights
        .iter()
        .enumerate()
        .filter(|(_, ht)| (*ht - b_mode).abs() <= bw)
        .map(|(i, _)| {
            let [x, y] = model.positions[i];
            model.background.get(
                (x.round().max(0.0) as usize).min(w - 1),
                (y.round().max(0.0) as usize).min(h - 1),
            )
        })
        .collect();
    let bg = quantile(&under, 0.5);
    Ok((
        AtomBrightness {
            b_atom,
            b_central: to_image_polarity(bg + b_atom, mode),
            b_background: to_image_polarity(bg, mode),
        },
        cluster,
    ))
}

/// Atom brightness of a frame from a fitted column model.
pub fn calibrate_atom_brightness(img: &ImageGray, mode: Mode) -> Result<AtomBrightness> {
    let cfg = CalibrationConfig::default();
    let j = atoms_bright(img, mode);
    let model = fit_atoms(&j, &cfg.atom_fit())?;
    Ok(brightness_of(&j, &model, mode)?.0)
}

/// Extremes of the fitted background inside a border of `margin` pixels,
/// where the smoothing kernel is cut short and the estimate is least certain.
fn background_range(model: &AtomModel, mode: Mode, margin: f64) -> (f64, f64) {
    let b = &model.background;
    let (w, h) = b.dims();
    let m = (margin.round() as usize).min((w.min(h) - 1) / 2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in m..h - m {
        for &v in &b.row(y)[m..w - m] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    match mode {
        Mode::Haadf => (lo, hi),
        Mode::Bf => (255.0 - hi, 255.0 - lo),
    }
}

/// Extremes of the fitted smooth background (atoms removed); `patch` sets
/// its smoothing scale (sigma `patch / 8`).
pub fn calibrate_background(img: &ImageGray, mode: Mode, patch: usize) -> Result<(f64, f64)> {
    if patch == 0 || patch > img.width().min(img.height()) {
        return Err(Error::param(format!(
            "patch {patch} must lie in 1..={}",
            img.width().min(img.height())
        )));
    }
    let cfg = CalibrationConfig {
        patch: patch.max(8),
        ..Default::default()
    };
    let model = fit_atoms(&atoms_bright(img, mode), &cfg.atom_fit())?;
    Ok(background_range(&model, mode, cfg.patch as f64 / 8.0))
}

/// Guesses the imaging mode: atoms are sparse bright peaks in HAADF and
/// sparse dark dips in BF, so the long tail of the blurred histogram points
/// at the atoms.
pub fn detect_polarity(img: &ImageGray) -> Result<Mode> {
    let b = gaussian_blur_2d(img, 1.5)?;
    let d = b.data();
    let (p1, p50, p99) = (quantile(d, 0.01), quantile(d, 0.5), quantile(d, 0.99));
    let lo: Vec<f64> = d.iter().copied().filter(|&v| v <= p1).collect();
    let hi: Vec<f64> = d.iter().copied().filter(|&v| v >= p99).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(if mean(&hi) - p50 >= p50 - mean(&lo) {
        Mode::Haadf
    } else {
        Mode::Bf
    })
}

/// Full calibration of one frame.
pub fn calibrate_image(
    img: &ImageGray,
    mode: Mode,
    cfg: &CalibrationConfig,
    source: &str,
    bit_depth: Option<BitDepth>,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    if !img.is_finite() {
        return Err(Error::param("image contains non-finite values"));
    }
    if img.width().min(img.height()) < 32 {
        return Err(Error::param(format!(
            "image {}x{} too small to calibrate (need 32x32)",
            img.width(),
            img.height()
        )));
    }
    let mut warnings = Vec::new();
    let polarity_check = detect_polarity(img)?;
    if polarity_check != mode {
        warnings.push(format!(
            "polarity check suggests {polarity_check} but {mode} was requested"
        ));
    }
    let j = atoms_bright(img, mode);
    let model = fit_atoms(&j, &cfg.atom_fit()).stage("brightness")?;
    let (bright, cluster_size) = brightness_of(&j, &model, mode).stage("brightness")?;
    let (bg_min, bg_max) = background_range(&model, mode, cfg.patch as f64 / 8.0);

    let clean = model.clean();
    let value = match mode {
        Mode::Haadf => clean.clone(),
        Mode::Bf => clean.map(|v| 255.0 - v),
    };
    let grad = gradient_magnitude(&clean).stage("scan")?;
    let settings = MomentSettings {
        sigma_row: cfg.sigma_row,
        n_bins: cfg.n_bins,
        min_bin_frac: cfg.min_bin_frac,
        saturation_frac: cfg.saturation_frac,
        lambda: (cfg.lambda_min, cfg.lambda_max, cfg.lambda_step),
        inversion_step: cfg.inversion_step,
        invert_lambda: cfg.invert_lambda,
        sim_seed: cfg.sim_seed,
    };
    let est = estimate_noise(img, &j, &clean, &value, &grad, &settings).stage("noise")?;
    if est.scan.low_r2 {
        warnings.push("scan fit has low R²".into());
    }
    if est.pointwise.low_r2 {
        warnings.push("pointwise fit has low R²".into());
    }
    if est.saturated_bins > 0 {
        warnings.push(format!("{} value bins masked for clipping", est.saturated_bins));
    }
    let profile = NoiseProfile {
        mode,
        b_atom: bright.b_atom,
        background: BackgroundParams {
            b_min: bg_min,
            b_max: bg_max,
            lattice: DEFAULT_BG_LATTICE,
        },
        scan: ScanNoiseParams {
            k: est.scan.k,
            b: est.scan.b,
        },
        pointwise: PointwiseParams {
            k: est.pointwise.k,
            b: est.pointwise.b,
            lambda: est.lambda.corrected,
        },
    };
    let (w, h) = img.dims();
    let n = model.sigmas.len().max(1) as f64;
    Ok(CalibrationReport {
        source: source.to_string(),
        profile,
        diagnostics: Diagnostics {
            width: w,
            height: h,
            bit_depth,
            version: crate::VERSION.to_string(),
            sigmas: BlurSigmas {
                detect: cfg.sigma_detect,
                row: cfg.sigma_row,
                background: cfg.patch as f64 / 8.0,
                clean_proxy: cfg.sigma2d,
            },
            atoms: AtomDiagnostics {
                count: model.positions.len(),
                spacing: model.spacing,
                mean_sigma: model.sigmas.iter().sum::<f64>() / n,
                cluster_size,
                b_central: bright.b_central,
                b_background: bright.b_background,
            },
            valid_pixels: est.valid_pixels,
            excluded_pixels: w * h - est.valid_pixels,
            clipped_pixels: est.clipped_pixels,
            saturated_bins: est.saturated_bins,
            scan: est.scan,
            pointwise: est.pointwise,
            lambda: est.lambda,
            polarity_check,
            warnings,
        },
    })
}
