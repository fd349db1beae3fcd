use super::params::{BackgroundParams, NoiseProfile, PointwiseParams, ScanNoiseParams};
use super::tukey::TukeySampler;
use super::value::{value_noise_1d, value_noise_2d};
use crate::error::Result;
use crate::image::{gradient_magnitude, ImageGray};
use crate::rng::SeededRng;

/// Lattice spacings (pixels) of the two scan-noise octaves.
pub const SCAN_LATTICES: [f64; 2] = [8.0, 2.0];

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
    v.iter_mut().for_each(|x| *x = (*x - m) * inv);
}

/// One row of unit scan signal: two standardized octaves mixed 0.5/0.5,
/// then standardized again to zero mean and unit std.
pub fn scan_unit_row(rng: &mut SeededRng, width: usize) -> Vec<f64> {
    let mut a = value_noise_1d(rng, width, SCAN_LATTICES[0]).expect("valid lattice");
    let mut b = value_noise_1d(rng, width, SCAN_LATTICES[1]).expect("valid lattice");
    standardize(&mut a);
    standardize(&mut b);
    let mut row: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    standardize(&mut row);
    row
}

/// Unmodulated scan signal, rows independent.
pub fn scan_unit_field(rng: &mut SeededRng, width: usize, height: usize) -> ImageGray {
    let mut data = Vec::with_capacity(width * height);
    for _ in 0..height {
        data.extend(scan_unit_row(rng, width));
    }
    ImageGray::from_raw(width, height, data)
}

/// Smooth background rescaled by its own extrema onto `[b_min, b_max]`.
pub fn gen_background(rng: &mut SeededRng, params: &BackgroundParams, w: usize, h: usize) -> Result<ImageGray> {
    let field = value_noise_2d(rng, w, h, params.lattice)?;
    let (lo, hi) = (field.min(), field.max());
    let span = params.b_max - params.b_min;
    if hi - lo <= 0.0 || span == 0.0 {
        return Ok(ImageGray::filled(w, h, params.b_min + 0.5 * span));
    }
    Ok(field.map(|v| params.b_min + span * (v - lo) / (hi - lo)))
}

/// Row-coherent scan noise with std `k * |grad source| + b` (k and b clamped at 0).
pub fn gen_scan_noise(rng: &mut SeededRng, source: &ImageGray, params: &ScanNoiseParams) -> Result<ImageGray> {
    let g = gradient_magnitude(source)?;
    let (k, b) = (params.k.max(0.0), params.b.max(0.0));
    let (w, h) = source.dims();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let unit = scan_unit_row(rng, w);
        out.extend(unit.iter().zip(g.row(y)).map(|(u, gv)| u * (k * gv + b)));
    }
    Ok(ImageGray::from_raw(w, h, out))
}

/// Independent Tukey-lambda noise with std `k * base + b` (clamped at 0).
pub fn gen_pointwise_noise(rng: &mut SeededRng, base: &ImageGray, params: &PointwiseParams) -> Result<ImageGray> {
    let s = TukeySampler::new(params.lambda)?;
    let data = base
        .data()
        .iter()
        .map(|&v| params.sigma_at(v) * s.sample_unit(rng))
        .collect();
    Ok(ImageGray::from_raw(base.width(), base.height(), data))
}

/// Noisy frame together with its unclamped components.
#[derive(Clone, Debug)]
pub struct NoiseComponents {
    pub background: ImageGray,
    pub scan: ImageGray,
    pub pointwise: ImageGray,
    /// `clean + background + scan + pointwise` before clamping.
    pub pre_clamp: ImageGray,
    /// `pre_clamp` clamped to `[0, 255]`.
    pub noisy: ImageGray,
}

/// Apply the full noise model to a clean render.
///
/// `clean` holds the signed atom contribution relative to the background
/// (positive in HAADF, negative in BF). Scan noise follows the gradient of
/// `clean + background` and pointwise noise follows its value.
pub fn apply_noise(clean: &ImageGray, profile: &NoiseProfile, rng: &mut SeededRng) -> Result<NoiseComponents> {
    let (w, h) = clean.dims();
    let mut bg_rng = SeededRng::new(rng.next_u64());
    let mut scan_rng = SeededRng::new(rng.next_u64());
    let mut pw_rng = SeededRng::new(rng.next_u64());
    let background = gen_background(&mut bg_rng, &profile.background, w, h)?;
    let base = clean.add(&background)?;
    let scan = gen_scan_noise(&mut scan_rng, &base, &profile.scan)?;
    let pointwise = gen_pointwise_noise(&mut pw_rng, &base, &profile.pointwise)?;
    let pre_clamp = ImageGray::from_raw(
        w,
        h,
        (0..w * h)
            .map(|i| base.data()[i] + scan.data()[i] + pointwise.data()[i])
            .collect(),
    );
    let noisy = pre_clamp.clamped(0.0, 255.0);
    Ok(NoiseComponents {
        background,
        scan,
        pointwise,
        pre_clamp,
        noisy,
    })
}
