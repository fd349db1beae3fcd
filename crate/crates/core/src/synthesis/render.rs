use super::{AtomSite, SceneConfig};
use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::noise::Mode;

/// Unnormalized sum of Gaussian spots, each cut off at 5σ.
pub fn gaussian_field(sites: &[AtomSite], size: usize) -> ImageGray {
    let mut img = ImageGray::zeros(size, size);
    let w = size as isize;
    for s in sites {
        let r = (5.0 * s.sigma).ceil() as isize;
        let (cx, cy) = (s.x.round() as isize, s.y.round() as isize);
        let inv = 1.0 / (2.0 * s.sigma * s.sigma);
        let xs: Vec<(usize, f64)> = ((cx - r).max(0)..=(cx + r).min(w - 1))
            .map(|x| (x as usize, (-(x as f64 - s.x).powi(2) * inv).exp()))
            .collect();
        if xs.is_empty() {
            continue;
        }
        for y in (cy - r).max(0)..=(cy + r).min(w - 1) {
            let gy = s.rel_brightness * (-(y as f64 - s.y).powi(2) * inv).exp();
            let row = img.row_mut(y as usize);
            for &(x, gx) in &xs {
                row[x] += gy * gx;
            }
        }
    }
    img
}

/// Clean render: the summed spot field is normalized to a peak of 1, scaled
/// by `b_atom`, then added to (HAADF) or subtracted from (BF) `bg_ref`.
pub fn render_clean(sites: &[AtomSite], cfg: &SceneConfig, b_atom: f64, bg_ref: f64) -> Result<ImageGray> {
    if !(b_atom > 0.0) {
        return Err(Error::param(format!("b_atom must be positive, got {b_atom}")));
    }
    let field = gaussian_field(sites, cfg.size);
    let peak = field.max();
    if sites.is_empty() || peak <= 0.0 {
        log::warn!("no atom inside the frame; rendering a flat image");
        return Ok(ImageGray::filled(cfg.size, cfg.size, bg_ref));
    }
    let gain = cfg.mode.sign() * b_atom / peak;
    Ok(field.map(|v| bg_ref + gain * v))
}

/// Detection label: 255-valued disks of radius 2 px at site centres.
pub fn render_detect_label(sites: &[AtomSite], cfg: &SceneConfig) -> ImageGray {
    const R: f64 = 2.0;
    let mut img = ImageGray::zeros(cfg.size, cfg.size);
    let n = cfg.size as isize;
    for s in sites {
        let (x0, x1) = ((s.x - R).ceil() as isize, (s.x + R).floor() as isize);
        let (y0, y1) = ((s.y - R).ceil() as isize, (s.y + R).floor() as isize);
        for y in y0.max(0)..=y1.min(n - 1) {
            for x in x0.max(0)..=x1.min(n - 1) {
                if (x as f64 - s.x).powi(2) + (y as f64 - s.y).powi(2) <= R * R {
                    img.set(x as usize, y as usize, 255.0);
                }
            }
        }
    }
    img
}

/// Super-resolution label: spots narrowed by `shrink`, HAADF polarity,
/// zero background, peak 255.
pub fn render_sr_label(sites: &[AtomSite], cfg: &SceneConfig, shrink: f64) -> Result<ImageGray> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::param(format!("shrink must lie in (0, 1], got {shrink}")));
    }
    let narrowed: Vec<AtomSite> = sites
        .iter()
        .map(|s| AtomSite {
            sigma: s.sigma * shrink,
            ..*s
        })
        .collect();
    let haadf = SceneConfig {
        mode: Mode::Haadf,
        ..cfg.clone()
    };
    render_clean(&narrowed, &haadf, 255.0, 0.0)
}
