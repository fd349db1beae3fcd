//! Pointwise noise from the image minus its row blur.

use serde::{Deserialize, Serialize};

use super::binning::BinStat;
use super::ppcc::{PpccCurve, ProbPlot, DEFAULT_PPCC_SAMPLES};
use super::scan::binned_std_fit;
use crate::error::{Error, Result};
use crate::image::{convolve_rows, gaussian_kernel, ImageGray};
use crate::noise::PointwiseParams;

/// Binned pointwise fit with its PPCC curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseFit {
    pub r2: Option<f64>,
    pub bins: Vec<BinStat>,
    pub discarded: Vec<usize>,
    pub low_r2: bool,
    pub ppcc: PpccCurve,
    pub correlation: f64,
}

/// Variance fraction of white noise kept by `x − g * x` for kernel `g`:
/// `1 − 2 g0 + Σ g²`.
pub fn row_residual_variance_factor(sigma_row: f64) -> Result<f64> {
    let k = gaussian_kernel(sigma_row)?;
    let c = k[k.len() / 2];
    Ok(1.0 - 2.0 * c + k.iter().map(|v| v * v).sum::<f64>())
}

/// `img − blur_rows(img)`, rescaled so white noise keeps its std.
pub fn extract_pointwise_noise(img: &ImageGray, sigma_row: f64) -> Result<ImageGray> {
    let k = gaussian_kernel(sigma_row)?;
    let scale = 1.0 / row_residual_variance_factor(sigma_row)?.sqrt();
    let blurred = convolve_rows(img, &k);
    img.zip_map(&blurred, |a, b| (a - b) * scale)
}

/// Binned OLS of noise std against base value, and λ from the PPCC of the
/// pooled per-bin standardized samples.
pub fn fit_pointwise(
    noise: &ImageGray,
    base: &ImageGray,
    n_bins: usize,
    min_bin_frac: f64,
    lambda_grid: &[f64],
) -> Result<(PointwiseParams, PointwiseFit)> {
    if lambda_grid.is_empty() {
        return Err(Error::param("empty lambda grid"));
    }
    let (fit, bins) = binned_std_fit(noise, base, n_bins, min_bin_frac, 2).map_err(|e| match e {
        Error::InsufficientGradient { surviving } => Error::Fit(format!(
            "pointwise fit needs two populated value bins, found {surviving}"
        )),
        e => e,
    })?;
    let means = bins.means(noise.data());
    let stds = bins.stds(noise.data());
    let kept: Vec<bool> = fit.bins.iter().map(|b| b.kept).collect();
    let z: Vec<f64> = noise
        .data()
        .iter()
        .zip(&bins.idx)
        .filter(|(_, &i)| kept[i] && stds[i] > 0.0)
        .map(|(v, &i)| (v - means[i]) / stds[i])
        .collect();
    let plot = ProbPlot::new(&z, DEFAULT_PPCC_SAMPLES)?;
    let ppcc = plot.curve(lambda_grid);
    let (lambda, correlation) = ppcc.best();
    Ok((
        PointwiseParams {
            k: fit.k,
            b: fit.b,
            lambda,
        },
        PointwiseFit {
            r2: fit.r2,
            bins: fit.bins,
            discarded: fit.discarded,
            low_r2: fit.low_r2,
            ppcc,
            correlation,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ppcc::lambda_grid;
    use crate::noise::TukeySampler;
    use crate::rng::SeededRng;

    #[test]
    fn factor_matches_empirical_variance() {
        let mut rng = SeededRng::new(8);
        let img = ImageGray::from_fn(512, 256, |_, _| 15.0 * rng.standard_normal());
        let n = extract_pointwise_noise(&img, 2.0).unwrap();
        assert!((n.std() / 15.0 - 1.0).abs() < 0.05, "{}", n.std());
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let img = ImageGray::filled(30, 20, 5.0);
        assert!(extract_pointwise_noise(&img, 2.0)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn recovers_injected_profile() {
        let mut rng = SeededRng::new(1);
        let ts = TukeySampler::new(0.27).unwrap();
        let base = ImageGray::from_fn(300, 300, |x, _| 20.0 + x as f64 * 0.7);
        let noise = base.map(|v| (0.07 * v + 11.35) * ts.sample_unit(&mut rng));
        let grid = lambda_grid(-0.3, 0.8, 0.01).unwrap();
        let (p, fit) = fit_pointwise(&noise, &base, 32, 0.005, &grid).unwrap();
        assert!((p.k - 0.07).abs() < 0.02 && (p.b - 11.35).abs() < 1.5, "{p:?}");
        assert!((p.lambda - 0.27).abs() < 0.08, "{}", p.lambda);
        assert!(fit.correlation > 0.99);
    }

    #[test]
    fn degenerate_samples_error() {
        let base = ImageGray::from_fn(20, 20, |x, _| x as f64);
        let noise = ImageGray::filled(20, 20, 1.0);
        let grid = [0.0, 0.1];
        assert!(fit_pointwise(&noise, &base, 8, 0.0, &grid).is_err());
    }
}
