use super::ImageGray;
use crate::error::{Error, Result};

/// Catmull-Rom spline through `p1` (t=0) and `p2` (t=1).
#[inline]
pub fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    0.5 * (2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

fn taps(coord: f64, n: usize) -> ([usize; 4], f64) {
    let i = coord.floor();
    let t = coord - i;
    let i = i as isize;
    let clamp = |k: isize| k.clamp(0, n as isize - 1) as usize;
    ([clamp(i - 1), clamp(i), clamp(i + 1), clamp(i + 2)], t)
}

/// Separable Catmull-Rom evaluation of `src` at source-space coordinates
/// `xs` (columns) and `ys` (rows), clamping at the edges.
pub fn catmull_rom_sample(src: &ImageGray, xs: &[f64], ys: &[f64]) -> ImageGray {
    let (sw, sh) = src.dims();
    let xt: Vec<([usize; 4], f64)> = xs.iter().map(|&x| taps(x, sw)).collect();
    let mut rows = vec![0.0; sh * xs.len()];
    for y in 0..sh {
        let r = src.row(y);
        for (i, (ix, t)) in xt.iter().enumerate() {
            rows[y * xs.len() + i] = catmull_rom(r[ix[0]], r[ix[1]], r[ix[2]], r[ix[3]], *t);
        }
    }
    let ow = xs.len();
    let mut out = Vec::with_capacity(ow * ys.len());
    for &y in ys {
        let (iy, t) = taps(y, sh);
        for x in 0..ow {
            out.push(catmull_rom(
                rows[iy[0] * ow + x],
                rows[iy[1] * ow + x],
                rows[iy[2] * ow + x],
                rows[iy[3] * ow + x],
                t,
            ));
        }
    }
    ImageGray::from_raw(ow, ys.len(), out)
}

/// Catmull-Rom upsampling with corner alignment: output pixel `x` samples
/// source coordinate `x * (w - 1) / (out_w - 1)`, so corners and every
/// aligned position reproduce source samples.
pub fn bicubic_upsample(img: &ImageGray, out_w: usize, out_h: usize) -> Result<ImageGray> {
    let (w, h) = img.dims();
    if out_w < w || out_h < h {
        return Err(Error::param(format!(
            "upsample target {out_w}x{out_h} smaller than source {w}x{h}"
        )));
    }
    let axis = |n: usize, out: usize| -> Vec<f64> {
        if out == 1 {
            return vec![0.0];
        }
        let step = (n - 1) as f64 / (out - 1) as f64;
        (0..out).map(|i| i as f64 * step).collect()
    };
    let xs = axis(w, out_w);
    let ys = axis(h, out_h);
    Ok(catmull_rom_sample(img, &xs, &ys))
}
