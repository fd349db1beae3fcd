//! Scan noise from the row-blur minus 2-D-blur difference image.

use serde::{Deserialize, Serialize};

use super::binning::{ols, BinStat, Bins};
use super::moments::LOW_R2;
use crate::error::{Error, Result};
use crate::image::{gaussian_blur_2d, gaussian_blur_rows, ImageGray};
use crate::noise::ScanNoiseParams;

/// Binned least-squares fit of noise std against a covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedFit {
    pub k: f64,
    pub b: f64,
    pub r2: Option<f64>,
    pub bins: Vec<BinStat>,
    pub discarded: Vec<usize>,
    pub low_r2: bool,
}

/// Clean-image proxy: a 2-D Gaussian blur.
pub fn estimate_clean(img: &ImageGray, sigma2d: f64) -> Result<ImageGray> {
    gaussian_blur_2d(img, sigma2d)
}

/// Row-blurred image minus the 2-D-blurred image.
pub fn extract_scan_noise(img: &ImageGray, sigma_row: f64, sigma2d: f64) -> Result<ImageGray> {
    gaussian_blur_rows(img, sigma_row)?.sub(&estimate_clean(img, sigma2d)?)
}

pub(crate) fn binned_std_fit(
    noise: &ImageGray,
    covariate: &ImageGray,
    n_bins: usize,
    min_bin_frac: f64,
    min_bins: usize,
) -> Result<(BinnedFit, Bins)> {
    noise.check_same_dims(covariate)?;
    if !(0.0..1.0).contains(&min_bin_frac) {
        return Err(Error::param(format!(
            "min_bin_frac must lie in [0, 1), got {min_bin_frac}"
        )));
    }
    let bins = Bins::new(covariate.data(), n_bins)?;
    // a bin needs two samples for a sample std
    let kept: Vec<bool> = bins
        .kept(min_bin_frac)
        .iter()
        .zip(&bins.counts)
        .map(|(&k, &c)| k && c >= 2)
        .collect();
    let surviving = kept.iter().filter(|&&k| k).count();
    if surviving < min_bins {
        return Err(Error::InsufficientGradient { surviving });
    }
    let stds = bins.stds(noise.data());
    let idx: Vec<usize> = (0..bins.n).filter(|&i| kept[i]).collect();
    let x: Vec<f64> = idx.iter().map(|&i| bins.center(i)).collect();
    let y: Vec<f64> = idx.iter().map(|&i| stds[i]).collect();
    let (k, b, r2) = ols(&x, &y)?;
    let stats = (0..bins.n)
        .map(|i| {
            let (lo, hi) = bins.edges(i);
            BinStat {
                lo,
                hi,
                count: bins.counts[i],
                std: if stds[i].is_finite() { stds[i] } else { 0.0 },
                model_std: k * bins.center(i) + b,
                kept: kept[i],
            }
        })
        .collect();
    let r2 = r2.is_finite().then_some(r2);
    Ok((
        BinnedFit {
            k,
            b,
            r2,
            bins: stats,
            discarded: (0..bins.n).filter(|&i| !kept[i]).collect(),
            low_r2: !r2.is_some_and(|v| v >= LOW_R2),
        },
        bins,
    ))
}

/// Per-gradient-bin std of `noise`, regressed linearly on bin centre.
pub fn fit_scan_noise(
    noise: &ImageGray,
    grad: &ImageGray,
    n_bins: usize,
    min_bin_frac: f64,
) -> Result<(ScanNoiseParams, BinnedFit)> {
    let (fit, _) = binned_std_fit(noise, grad, n_bins, min_bin_frac, 3)?;
    Ok((ScanNoiseParams { k: fit.k, b: fit.b }, fit))
}
