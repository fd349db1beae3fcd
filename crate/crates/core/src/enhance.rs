//! Classical enhancement baselines: adaptive Wiener, bilateral (optionally
//! with average-background subtraction) and Fourier peak filtering.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_filter, fft2, gaussian_blur_2d, ifft2_complex, reflect_index, ImageGray};

/// Blur sigma of the background removed by the ABSF variant.
pub const ABSF_BACKGROUND_SIGMA: f64 = 25.0;
/// Largest tolerated imaginary residue of the inverse FFT, relative to signal RMS.
const IMAG_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FilterConfig {
    Wiener {
        window: usize,
        /// `None` estimates the noise variance as the median local variance.
        noise_var: Option<f64>,
    },
    Bilateral {
        sigma_spatial: f64,
        sigma_range: f64,
        subtract_background: bool,
    },
    #[serde(rename = "fftpeak")]
    FftPeak { keep_fraction: f64, dc_protect: bool },
}

impl FilterConfig {
    pub fn wiener() -> Self {
        FilterConfig::Wiener {
            window: 5,
            noise_var: None,
        }
    }

    pub fn bilateral() -> Self {
        FilterConfig::Bilateral {
            sigma_spatial: 3.0,
            sigma_range: 25.0,
            subtract_background: false,
        }
    }

    /// Bilateral filtering after average-background subtraction.
    pub fn absf() -> Self {
        FilterConfig::Bilateral {
            sigma_spatial: 3.0,
            sigma_range: 25.0,
            subtract_background: true,
        }
    }

    pub fn fft_peak() -> Self {
        FilterConfig::FftPeak {
            keep_fraction: 0.02,
            dc_protect: true,
        }
    }

    /// Default configuration for a method name (`wiener`, `bilateral`,
    /// `absf`, `fftpeak`).
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "wiener" => Some(Self::wiener()),
            "bilateral" => Some(Self::bilateral()),
            "absf" => Some(Self::absf()),
            "fftpeak" | "fft-peak" | "fft_peak" => Some(Self::fft_peak()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterConfig::Wiener { .. } => "wiener",
            FilterConfig::Bilateral {
                subtract_background: true,
                ..
            } => "absf",
            FilterConfig::Bilateral { .. } => "bilateral",
            FilterConfig::FftPeak { .. } => "fftpeak",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterConfig::Wiener { window, noise_var } => {
                check_window(window)?;
                if let Some(v) = noise_var {
                    if !(v >= 0.0) {
                        return Err(Error::param(format!("noise variance must be non-negative, got {v}")));
                    }
                }
            }
            FilterConfig::Bilateral {
                sigma_spatial,
                sigma_range,
                ..
            } => check_sigmas(sigma_spatial, sigma_range)?,
            FilterConfig::FftPeak { keep_fraction, .. } => check_keep(keep_fraction)?,
        }
        Ok(())
    }

    pub fn apply(&self, img: &ImageGray) -> Result<ImageGray> {
        match *self {
            FilterConfig::Wiener { window, noise_var } => wiener_filter(img, window, noise_var),
            FilterConfig::Bilateral {
                sigma_spatial,
                sigma_range,
                subtract_background,
            } => bilateral_filter(img, sigma_spatial, sigma_range, subtract_background),
            FilterConfig::FftPeak {
                keep_fraction,
                dc_protect,
            } => fft_peak_filter(img, keep_fraction, dc_protect),
        }
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::param(format!("window must be odd and at least 3, got {window}")));
    }
    Ok(())
}

fn check_sigmas(spatial: f64, range: f64) -> Result<()> {
    if !(spatial > 0.0) || !(range > 0.0) {
        return Err(Error::param(format!(
            "bilateral sigmas must be positive, got spatial {spatial} and range {range}"
        )));
    }
    Ok(())
}

fn check_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::param(format!("keep fraction must lie in (0, 1], got {keep}")));
    }
    Ok(())
}

/// Local adaptive Wiener filter over a `window × window` neighbourhood.
pub fn wiener_filter(img: &ImageGray, window: usize, noise_var: Option<f64>) -> Result<ImageGray> {
    check_window(window)?;
    let mean = box_filter(img, window)?;
    let sq = box_filter(&img.map(|v| v * v), window)?;
    let var: Vec<f64> = mean
        .data()
        .iter()
        .zip(sq.data())
        .map(|(m, s)| (s - m * m).max(0.0))
        .collect();
    let v = match noise_var {
        Some(v) if v >= 0.0 => v,
        Some(v) => return Err(Error::param(format!("noise variance must be non-negative, got {v}"))),
        None => median(&var),
    };
    let out = img
        .data()
        .iter()
        .zip(mean.data())
        .zip(&var)
        .map(|((&x, &m), &s2)| {
            let den = s2.max(v);
            let gain = if den > 0.0 { (s2 - v).max(0.0) / den } else { 0.0 };
            m + gain * (x - m)
        })
        .collect();
    Ok(ImageGray::from_raw(img.width(), img.height(), out))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    let mid = s.len() / 2;
    let (_, m, _) = s.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Bilateral filter with a square window of radius `ceil(3 sigma_spatial)`
/// and reflected edges. With `subtract_background` a sigma-25 blur is
/// removed first and the result shifted back to the input's minimum.
pub fn bilateral_filter(
    img: &ImageGray,
    sigma_spatial: f64,
    sigma_range: f64,
    subtract_background: bool,
) -> Result<ImageGray> {
    check_sigmas(sigma_spatial, sigma_range)?;
    if !subtract_background {
        return Ok(bilateral_core(img, sigma_spatial, sigma_range));
    }
    let bg = gaussian_blur_2d(img, ABSF_BACKGROUND_SIGMA)?;
    let filtered = bilateral_core(&img.sub(&bg)?, sigma_spatial, sigma_range);
    let shift = img.min() - filtered.min();
    Ok(filtered.map(|v| v + shift))
}

fn bilateral_core(img: &ImageGray, sigma_spatial: f64, sigma_range: f64) -> ImageGray {
    let (w, h) = img.dims();
    let r = (3.0 * sigma_spatial).ceil() as isize;
    let spatial: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_spatial * sigma_spatial)).exp())
        .collect();
    let inv_range = 1.0 / (2.0 * sigma_range * sigma_range);
    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let rows: Vec<&[f64]> = (-r..=r).map(|dy| img.row(reflect_index(y as isize + dy, h))).collect();
            let spatial = &spatial;
            (0..w).map(move |x| {
                let c = img.get(x, y);
                let (mut num, mut den) = (0.0, 0.0);
                for (iy, row) in rows.iter().enumerate() {
                    let wy = spatial[iy];
                    for dx in -r..=r {
                        let v = row[reflect_index(x as isize + dx, w)];
                        let wt = wy * spatial[(dx + r) as usize] * (-(v - c) * (v - c) * inv_range).exp();
                        num += wt * v;
                        den += wt;
                    }
                }
                num / den
            })
        })
        .collect();
    ImageGray::from_raw(w, h, data)
}

/// Keeps the strongest `keep_fraction` of Fourier bins (plus DC when
/// protected) and transforms back. Conjugate partners are kept together so
/// the result stays real.
pub fn fft_peak_filter(img: &ImageGray, keep_fraction: f64, dc_protect: bool) -> Result<ImageGray> {
    check_keep(keep_fraction)?;
    let mut spec = fft2(img);
    let n = spec.values.len();
    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    if keep < n {
        let mags = spec.magnitudes();
        let mut sorted = mags.clone();
        let (_, thr, _) = sorted.select_nth_unstable_by(n - keep, f64::total_cmp);
        let thr = *thr;
        let mut kept = vec![false; n];
        let mut count = 0;
        // strictly larger first, then ties in index order up to the budget
        for i in 0..n {
            if mags[i] > thr {
                kept[i] = true;
                count += 1;
            }
        }
        for i in 0..n {
            if count >= keep {
                break;
            }
            if !kept[i] && mags[i] == thr {
                kept[i] = true;
                count += 1;
            }
        }
        if dc_protect {
            kept[0] = true;
        }
        for i in 0..n {
            if kept[i] {
                kept[spec.conjugate_index(i)] = true;
            }
        }
        for (v, k) in spec.values.iter_mut().zip(&kept) {
            if !k {
                *v = Default::default();
            }
        }
    }
    let z = ifft2_complex(&spec)?;
    let re: Vec<f64> = z.iter().map(|c| c.re).collect();
    let rms = |it: &mut dyn Iterator<Item = f64>| (it.map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let re_rms = rms(&mut re.iter().copied());
    let im_rms = rms(&mut z.iter().map(|c| c.im));
    if im_rms > IMAG_TOLERANCE * re_rms.max(1e-12) {
        return Err(Error::Numerical(format!(
            "inverse FFT left imaginary RMS {im_rms:.3e} against signal RMS {re_rms:.3e}"
        )));
    }
    Ok(ImageGray::from_raw(img.width(), img.height(), re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::rng::SeededRng;

    /// Square lattice of Gaussian spots that tiles the frame exactly.
    fn lattice(n: usize, spacing: usize, sigma: f64) -> ImageGray {
        ImageGray::from_fn(n, n, |x, y| {
            let s = spacing as f64;
            let dx = (x % spacing) as f64 - s / 2.0;
            let dy = (y % spacing) as f64 - s / 2.0;
            20.0 + 150.0 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
    }

    fn with_noise(img: &ImageGray, sigma: f64, seed: u64) -> ImageGray {
        let mut rng = SeededRng::new(seed);
        img.map(|v| v + sigma * rng.standard_normal())
    }

    #[test]
    fn constants_pass_through() {
        let c = ImageGray::filled(40, 36, 77.0);
        for cfg in [
            FilterConfig::wiener(),
            FilterConfig::bilateral(),
            FilterConfig::absf(),
            FilterConfig::fft_peak(),
        ] {
            let out = cfg.apply(&c).unwrap();
            assert!(out.data().iter().all(|v| (v - 77.0).abs() < 1e-6), "{}", cfg.name());
        }
    }

    #[test]
    fn parameter_checks() {
        let img = ImageGray::filled(16, 16, 1.0);
        assert!(wiener_filter(&img, 4, None).is_err());
        assert!(wiener_filter(&img, 1, None).is_err());
        assert!(wiener_filter(&img, 3, Some(-1.0)).is_err());
        assert!(bilateral_filter(&img, 0.0, 10.0, false).is_err());
        assert!(bilateral_filter(&img, 1.0, -1.0, false).is_err());
        assert!(fft_peak_filter(&img, 0.0, true).is_err());
        assert!(fft_peak_filter(&img, 1.5, true).is_err());
        assert!(FilterConfig::by_name("median").is_none());
        assert_eq!(FilterConfig::by_name("ABSF").unwrap().name(), "absf");
    }

    #[test]
    fn wiener_identity_at_zero_noise_and_denoises() {
        let clean = lattice(128, 16, 3.0);
        let noisy = with_noise(&clean, 15.0, 1);
        let same = wiener_filter(&noisy, 5, Some(0.0)).unwrap();
        assert!(same.data().iter().zip(noisy.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        let out = wiener_filter(&noisy, 5, None).unwrap();
        let gain = psnr(&out, &clean, 255.0).unwrap() - psnr(&noisy, &clean, 255.0).unwrap();
        assert!(gain >= 2.0, "gain {gain}");
    }

    #[test]
    fn bilateral_keeps_edges_and_smooths_flats() {
        let step = ImageGray::from_fn(64, 64, |x, _| if x < 32 { 50.0 } else { 150.0 });
        let noisy = with_noise(&step, 10.0, 2);
        let out = bilateral_filter(&noisy, 3.0, 25.0, false).unwrap();
        // 10-90% rise, averaged over rows
        let rise = |img: &ImageGray| {
            let prof: Vec<f64> = (0..64)
                .map(|x| (8..56).map(|y| img.get(x, y)).sum::<f64>() / 48.0)
                .collect();
            let cross = |level: f64| {
                let i = prof.iter().position(|&v| v >= level).unwrap();
                (i - 1) as f64 + (level - prof[i - 1]) / (prof[i] - prof[i - 1])
            };
            cross(140.0) - cross(60.0)
        };
        assert!(
            (rise(&out) - rise(&step)).abs() <= 1.0,
            "{} vs {}",
            rise(&out),
            rise(&step)
        );
        let flat_std = |img: &ImageGray| img.crop(4, 4, 20, 56).unwrap().std();
        assert!(
            flat_std(&noisy) >= 3.0 * flat_std(&out),
            "{} {}",
            flat_std(&noisy),
            flat_std(&out)
        );
    }

    #[test]
    fn bilateral_wide_range_is_gaussian_blur() {
        let img = with_noise(&lattice(64, 16, 3.0), 10.0, 3);
        let a = bilateral_filter(&img, 2.0, 1e9, false).unwrap();
        let b = gaussian_blur_2d(&img, 2.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 0.01 * y.abs().max(1.0));
        }
    }

    #[test]
    fn absf_restores_minimum() {
        let img = with_noise(&lattice(64, 16, 3.0), 5.0, 4).map(|v| v + 30.0);
        let out = bilateral_filter(&img, 2.0, 25.0, true).unwrap();
        assert!((out.min() - img.min()).abs() < 1e-9);
    }

    #[test]
    fn fft_peak_identity_sparsity_and_denoising() {
        let img = with_noise(&lattice(64, 16, 3.0), 5.0, 5);
        let same = fft_peak_filter(&img, 1.0, true).unwrap();
        assert!(same.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-4));

        let clean = lattice(256, 16, 2.5);
        let kept = fft_peak_filter(&clean, 0.02, true).unwrap();
        assert!(psnr(&kept, &clean, 255.0).unwrap() >= 40.0);

        let noisy = with_noise(&clean, 15.0, 6);
        let out = fft_peak_filter(&noisy, 0.02, true).unwrap();
        let gain = psnr(&out, &clean, 255.0).unwrap() - psnr(&noisy, &clean, 255.0).unwrap();
        assert!(gain >= 5.0, "gain {gain}");
    }

    #[test]
    fn psnr_falls_with_noise_for_every_filter() {
        let clean = lattice(128, 16, 3.0);
        for cfg in [
            FilterConfig::wiener(),
            FilterConfig::bilateral(),
            FilterConfig::fft_peak(),
        ] {
            let scores: Vec<f64> = [5.0, 15.0, 25.0]
                .iter()
                .map(|&s| {
                    let out = cfg.apply(&with_noise(&clean, s, 7)).unwrap();
                    psnr(&out, &clean, 255.0).unwrap()
                })
                .collect();
            assert!(
                scores[0] >= scores[1] && scores[1] >= scores[2],
                "{}: {scores:?}",
                cfg.name()
            );
        }
    }

    #[test]
    fn config_serializes_with_method_tag() {
        let s = serde_json::to_string(&FilterConfig::fft_peak()).unwrap();
        assert!(s.contains("\"method\":\"fftpeak\""), "{s}");
        let back: FilterConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, FilterConfig::fft_peak());
    }
}
