//! Value noise: a uniform random lattice smoothed by Catmull-Rom interpolation.

use crate::error::{Error, Result};
use crate::image::{catmull_rom, catmull_rom_sample, ImageGray};
use crate::rng::SeededRng;

fn check_lattice(lattice: f64) -> Result<()> {
    if !(lattice >= 2.0) || !lattice.is_finite() {
        return Err(Error::param(format!("lattice must be at least 2 px, got {lattice}")));
    }
    Ok(())
}

fn grid_len(n: usize, lattice: f64) -> usize {
    (n as f64 / lattice).ceil() as usize + 3
}

/// 1-D value noise of length `n` with control points every `lattice` pixels.
/// Values lie in roughly `[0, 1]` (Catmull-Rom can overshoot slightly).
pub fn value_noise_1d(rng: &mut SeededRng, n: usize, lattice: f64) -> Result<Vec<f64>> {
    check_lattice(lattice)?;
    let g: Vec<f64> = (0..grid_len(n, lattice)).map(|_| rng.uniform()).collect();
    Ok((0..n)
        .map(|x| {
            let pos = x as f64 / lattice + 1.0;
            let i = pos.floor() as usize;
            catmull_rom(g[i - 1], g[i], g[i + 1], g[i + 2], pos - i as f64)
        })
        .collect())
}

/// 2-D value noise in `[0, 1]`: a uniform grid of `ceil(out/lattice) + 3`
/// points per axis, upsampled bicubically and clamped.
pub fn value_noise_2d(rng: &mut SeededRng, out_w: usize, out_h: usize, lattice: f64) -> Result<ImageGray> {
    check_lattice(lattice)?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::param("value noise dimensions must be positive"));
    }
    let (gw, gh) = (grid_len(out_w, lattice), grid_len(out_h, lattice));
    let grid = ImageGray::from_fn(gw, gh, |_, _| rng.uniform());
    let xs: Vec<f64> = (0..out_w).map(|x| x as f64 / lattice + 1.0).collect();
    let ys: Vec<f64> = (0..out_h).map(|y| y as f64 / lattice + 1.0).collect();
    Ok(catmull_rom_sample(&grid, &xs, &ys).clamped(0.0, 1.0))
}
