use super::filters::{convolve_cols, convolve_rows};
use super::ImageGray;
use crate::error::{Error, Result};

pub fn mse(a: &ImageGray, b: &ImageGray) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &ImageGray, b: &ImageGray, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WIN / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Windowed means over the valid region only (no padding).
fn valid_filter(img: &ImageGray, k: &[f64]) -> Vec<f64> {
    let full = convolve_cols(&convolve_rows(img, k), k);
    let r = k.len() / 2;
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity((w - 2 * r) * (h - 2 * r));
    for y in r..h - r {
        out.extend_from_slice(&full.row(y)[r..w - r]);
    }
    out
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03,
/// range 255), averaged over every window fully inside the image.
pub fn ssim(a: &ImageGray, b: &ImageGray) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::param(format!("ssim needs at least 11x11, got {w}x{h}")));
    }
    if a == b {
        return Ok(1.0);
    }
    let k = ssim_window();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let ma = valid_filter(a, &k);
    let mb = valid_filter(b, &k);
    let aa = valid_filter(&a.map(|v| v * v), &k);
    let bb = valid_filter(&b.map(|v| v * v), &k);
    let ab = valid_filter(&a.zip_map(b, |x, y| x * y)?, &k);
    let mut total = 0.0;
    for i in 0..ma.len() {
        let (mx, my) = (ma[i], mb[i]);
        let vx = aa[i] - mx * mx;
        let vy = bb[i] - my * my;
        let cxy = ab[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / ma.len() as f64)
}
