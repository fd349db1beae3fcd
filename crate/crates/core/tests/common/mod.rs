#![allow(dead_code)]

use stemsynth::noise::{apply_noise, NoiseComponents, DEFAULT_BG_LATTICE};
use stemsynth::synthesis::{build_periodic, lattice_preset, render_clean, Arrangement};
use stemsynth::{BackgroundParams, ImageGray, Mode, NoiseProfile, PointwiseParams, ScanNoiseParams};
use stemsynth::{SceneConfig, SeededRng};

/// Scene whose nearest-neighbour distance is `nn_px` pixels.
pub fn scene(name: &str, nn_px: f64, mode: Mode, seed: u64) -> SceneConfig {
    let spec = lattice_preset(name).expect("preset exists");
    SceneConfig {
        mode,
        size: 256,
        scale: nn_px / spec.nn_distance(),
        rotation: 7.0 + 11.0 * seed as f64,
        offset: [0.31, 0.67],
        arrangement: Arrangement::Periodic,
        seed,
    }
}

/// Signed clean field of a periodic lattice (zero background).
pub fn lattice_clean(name: &str, nn_px: f64, mode: Mode, b_atom: f64, seed: u64) -> ImageGray {
    let sc = scene(name, nn_px, mode, seed);
    let sites = build_periodic(lattice_preset(name).unwrap(), &sc).unwrap();
    render_clean(&sites, &sc, b_atom, 0.0).unwrap()
}

pub fn profile(mode: Mode, b_atom: f64, bg: (f64, f64), scan: (f64, f64), pw: (f64, f64, f64)) -> NoiseProfile {
    NoiseProfile {
        mode,
        b_atom,
        background: BackgroundParams {
            b_min: bg.0,
            b_max: bg.1,
            lattice: DEFAULT_BG_LATTICE,
        },
        scan: ScanNoiseParams { k: scan.0, b: scan.1 },
        pointwise: PointwiseParams {
            k: pw.0,
            b: pw.1,
            lambda: pw.2,
        },
    }
}

/// The real-HAADF noise parameters with the given brightness and background.
pub fn haadf_real(b_atom: f64, bg: (f64, f64)) -> NoiseProfile {
    profile(Mode::Haadf, b_atom, bg, (0.11, 4.76), (0.07, 11.35, 0.27))
}

pub fn noisy(clean: &ImageGray, p: &NoiseProfile, seed: u64) -> NoiseComponents {
    apply_noise(clean, p, &mut SeededRng::new(seed)).unwrap()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}
