use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::ImageGray;
use crate::error::{Error, Result};

/// 2-D spectrum in unshifted layout (DC at index 0).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Complex64>,
}

impl SpectrumGrid {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.values[v * self.width + u]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Index of the bin holding frequency `(-u, -v)`.
    #[inline]
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let (u, v) = (idx % self.width, idx / self.width);
        let cu = (self.width - u) % self.width;
        let cv = (self.height - v) % self.height;
        cv * self.width + cu
    }
}

fn transform_2d(values: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row_fft.process(values);
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = values[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            values[y * w + x] = col[y];
        }
    }
}

/// Forward 2-D DFT (unnormalized; the DC bin equals the sample sum).
pub fn fft2(img: &ImageGray) -> SpectrumGrid {
    let (w, h) = img.dims();
    let mut values: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut values, w, h, false);
    SpectrumGrid {
        width: w,
        height: h,
        values,
    }
}

/// Inverse 2-D DFT scaled by `1/N`, keeping the imaginary part.
pub fn ifft2_complex(spec: &SpectrumGrid) -> Result<Vec<Complex64>> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 || spec.values.len() != w * h {
        return Err(Error::param(format!(
            "spectrum of {} values does not match {w}x{h}",
            spec.values.len()
        )));
    }
    let mut values = spec.values.clone();
    transform_2d(&mut values, w, h, true);
    let scale = 1.0 / (w * h) as f64;
    values.iter_mut().for_each(|c| *c *= scale);
    Ok(values)
}

/// Inverse 2-D DFT, real part.
pub fn ifft2(spec: &SpectrumGrid) -> Result<ImageGray> {
    let values = ifft2_complex(spec)?;
    ImageGray::new(spec.width, spec.height, values.iter().map(|c| c.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn constant_has_only_dc() {
        let s = fft2(&ImageGray::filled(16, 16, 3.0));
        assert!((s.values[0].re - 256.0 * 3.0).abs() < 1e-6);
        assert!(s.values[1..].iter().all(|c| c.norm() < 1e-6));
    }

    #[test]
    fn cosine_has_two_bins() {
        let k = 3.0;
        let img = ImageGray::from_fn(32, 8, |x, _| (2.0 * std::f64::consts::PI * k * x as f64 / 32.0).cos());
        let s = fft2(&img);
        let nz: Vec<usize> = (0..s.values.len()).filter(|&i| s.values[i].norm() > 1e-6).collect();
        assert_eq!(nz, vec![3, 29]);
    }

    #[test]
    fn round_trip_odd_sizes() {
        let mut rng = SeededRng::new(3);
        let img = ImageGray::from_fn(37, 41, |_, _| rng.uniform() * 255.0);
        let back = ifft2(&fft2(&img)).unwrap();
        let err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);
    }

    #[test]
    fn parseval() {
        let mut rng = SeededRng::new(4);
        let img = ImageGray::from_fn(24, 18, |_, _| rng.normal(0.0, 30.0));
        let s = fft2(&img);
        let e_img: f64 = img.data().iter().map(|v| v * v).sum();
        let e_spec: f64 = s.values.iter().map(|c| c.norm_sqr()).sum::<f64>() / img.len() as f64;
        assert!((e_img - e_spec).abs() / e_img < 1e-6);
    }

    #[test]
    fn mismatched_spectrum_rejected() {
        let mut s = fft2(&ImageGray::filled(4, 4, 1.0));
        s.values.pop();
        assert!(ifft2(&s).is_err());
    }

    #[test]
    fn conjugate_index_pairs() {
        let s = fft2(&ImageGray::filled(6, 5, 1.0));
        assert_eq!(s.conjugate_index(0), 0);
        assert_eq!(s.conjugate_index(1), 5);
        assert_eq!(s.conjugate_index(6 + 2), 4 * 6 + 4);
    }
}
