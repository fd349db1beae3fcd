use super::ImageGray;
use crate::error::{Error, Result};

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized Gaussian taps with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Correlate every row with an odd-length kernel (reflect boundaries).
pub fn convolve_rows(img: &ImageGray, kernel: &[f64]) -> ImageGray {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    let (w, h) = img.dims();
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * r as usize];
    for y in 0..h {
        let row = img.row(y);
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[reflect_index(j as isize - r, w)];
        }
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            let win = &padded[x..x + kernel.len()];
            *d = win.iter().zip(kernel).map(|(a, b)| a * b).sum();
        }
    }
    ImageGray::from_raw(w, h, out)
}

/// Correlate every column with an odd-length kernel (reflect boundaries).
pub fn convolve_cols(img: &ImageGray, kernel: &[f64]) -> ImageGray {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    let (w, h) = img.dims();
    let r = (kernel.len() / 2) as isize;
    let src = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, &kv) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let srow = &src[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += kv * s;
            }
        }
    }
    ImageGray::from_raw(w, h, out)
}

/// Separable 2-D Gaussian blur, radius `ceil(3 * sigma)`, reflected edges.
pub fn gaussian_blur_2d(img: &ImageGray, sigma: f64) -> Result<ImageGray> {
    let k = gaussian_kernel(sigma)?;
    Ok(convolve_cols(&convolve_rows(img, &k), &k))
}

/// 1-D Gaussian blur applied to each row independently.
pub fn gaussian_blur_rows(img: &ImageGray, sigma: f64) -> Result<ImageGray> {
    let k = gaussian_kernel(sigma)?;
    Ok(convolve_rows(img, &k))
}

/// Mean over a `size x size` window (odd size, reflected edges).
pub fn box_filter(img: &ImageGray, size: usize) -> Result<ImageGray> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::param(format!("window must be odd and positive, got {size}")));
    }
    let k = vec![1.0 / size as f64; size];
    Ok(convolve_cols(&convolve_rows(img, &k), &k))
}

fn rank_filter(img: &ImageGray, size: usize, pick: fn(f64, f64) -> f64, init: f64) -> ImageGray {
    let (w, h) = img.dims();
    let r = (size / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = init;
            for d in -r..=r {
                acc = pick(acc, row[reflect_index(x as isize + d, w)]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = init;
            for d in -r..=r {
                acc = pick(acc, tmp[reflect_index(y as isize + d, h) * w + x]);
            }
            out[y * w + x] = acc;
        }
    }
    ImageGray::from_raw(w, h, out)
}

/// Minimum over a `size x size` window (odd size, reflected edges).
pub fn min_filter(img: &ImageGray, size: usize) -> ImageGray {
    rank_filter(img, size.max(1) | 1, f64::min, f64::INFINITY)
}

/// Maximum over a `size x size` window (odd size, reflected edges).
pub fn max_filter(img: &ImageGray, size: usize) -> ImageGray {
    rank_filter(img, size.max(1) | 1, f64::max, f64::NEG_INFINITY)
}

/// Central-difference gradient magnitude with one-sided differences on the border.
pub fn gradient_magnitude(img: &ImageGray) -> Result<ImageGray> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::param(format!("gradient needs at least 3x3, got {w}x{h}")));
    }
    let d = |a: f64, b: f64, span: f64| (b - a) / span;
    let out = ImageGray::from_fn(w, h, |x, y| {
        let gx = match x {
            0 => d(img.get(0, y), img.get(1, y), 1.0),
            _ if x == w - 1 => d(img.get(x - 1, y), img.get(x, y), 1.0),
            _ => d(img.get(x - 1, y), img.get(x + 1, y), 2.0),
        };
        let gy = match y {
            0 => d(img.get(x, 0), img.get(x, 1), 1.0),
            _ if y == h - 1 => d(img.get(x, y - 1), img.get(x, y), 1.0),
            _ => d(img.get(x, y - 1), img.get(x, y + 1), 2.0),
        };
        gx.hypot(gy)
    });
    Ok(out)
}
