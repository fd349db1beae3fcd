use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{AtomSite, SceneConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Species {
    /// Brightness relative to the brightest column, in (0, 1].
    pub rel_brightness: f64,
    /// Spot width in lattice units.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifSite {
    /// Offset in fractions of `a1` and `a2`.
    pub frac: [f64; 2],
    pub species: String,
}

/// A projected crystal structure in lattice units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub name: String,
    pub a1: [f64; 2],
    pub a2: [f64; 2],
    pub motif: Vec<MotifSite>,
    pub species: BTreeMap<String, Species>,
}

static PRESETS: OnceLock<Vec<LatticeSpec>> = OnceLock::new();

/// The 15 built-in structures.
pub fn lattice_presets() -> &'static [LatticeSpec] {
    PRESETS.get_or_init(|| {
        let specs: Vec<LatticeSpec> = serde_json::from_str(include_str!("../../presets/lattices.json"))
            .expect("embedded lattice presets are valid JSON");
        for s in &specs {
            s.validate().expect("embedded lattice presets are valid");
        }
        specs
    })
}

pub fn lattice_preset(name: &str) -> Option<&'static LatticeSpec> {
    lattice_presets().iter().find(|s| s.name == name)
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        let det = self.a1[0] * self.a2[1] - self.a1[1] * self.a2[0];
        if !(det.abs() > 1e-9) {
            return Err(Error::param(format!(
                "{}: basis vectors are linearly dependent",
                self.name
            )));
        }
        if self.motif.is_empty() {
            return Err(Error::param(format!("{}: empty motif", self.name)));
        }
        for m in &self.motif {
            let sp = self
                .species
                .get(&m.species)
                .ok_or_else(|| Error::param(format!("{}: unknown species {}", self.name, m.species)))?;
            if !(sp.sigma > 0.0) || !(sp.rel_brightness > 0.0 && sp.rel_brightness <= 1.0) {
                return Err(Error::param(format!("{}: invalid species {}", self.name, m.species)));
            }
        }
        Ok(())
    }

    fn cart(&self, f: [f64; 2]) -> [f64; 2] {
        [
            f[0] * self.a1[0] + f[1] * self.a2[0],
            f[0] * self.a1[1] + f[1] * self.a2[1],
        ]
    }

    /// Nearest-neighbour distance between projected columns, in lattice units.
    pub fn nn_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.motif {
            let pa = self.cart(a.frac);
            for b in &self.motif {
                for i in -1..=1 {
                    for j in -1..=1 {
                        let pb = self.cart([b.frac[0] + i as f64, b.frac[1] + j as f64]);
                        let d = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
                        if d > 1e-9 {
                            best = best.min(d);
                        }
                    }
                }
            }
        }
        best
    }

    /// Range of species spot widths (lattice units) and brightnesses.
    pub fn species_ranges(&self) -> ([f64; 2], [f64; 2]) {
        let mut s = [f64::INFINITY, f64::NEG_INFINITY];
        let mut b = [f64::INFINITY, f64::NEG_INFINITY];
        for sp in self.species.values() {
            s = [s[0].min(sp.sigma), s[1].max(sp.sigma)];
            b = [b[0].min(sp.rel_brightness), b[1].max(sp.rel_brightness)];
        }
        (s, b)
    }
}

/// Tile `spec` over the frame under `cfg.scale` and `cfg.rotation`.
///
/// The lattice origin sits at the frame centre shifted by `cfg.offset`
/// (fractions of the basis). Sites further than 2σ outside the frame are culled.
pub fn build_periodic(spec: &LatticeSpec, cfg: &SceneConfig) -> Result<Vec<AtomSite>> {
    spec.validate()?;
    cfg.validate()?;
    let size = cfg.size as f64;
    let (sin, cos) = cfg.rotation.to_radians().sin_cos();
    let a1 = [spec.a1[0] * cfg.scale, spec.a1[1] * cfg.scale];
    let a2 = [spec.a2[0] * cfg.scale, spec.a2[1] * cfg.scale];
    let rot = |v: [f64; 2]| [cos * v[0] - sin * v[1], sin * v[0] + cos * v[1]];
    let (r1, r2) = (rot(a1), rot(a2));
    let centre = 0.5 * size;

    // Cell range covering the frame's circumscribed circle.
    let det = (r1[0] * r2[1] - r1[1] * r2[0]).abs();
    let reach = size * std::f64::consts::FRAC_1_SQRT_2 + 4.0 * cfg.scale;
    let n1 = (reach * r2[0].hypot(r2[1]) / det).ceil() as i64 + 1;
    let n2 = (reach * r1[0].hypot(r1[1]) / det).ceil() as i64 + 1;

    let mut sites = Vec::new();
    for i in -n1..=n1 {
        for j in -n2..=n2 {
            for m in &spec.motif {
                let sp = &spec.species[&m.species];
                let fi = i as f64 + m.frac[0] + cfg.offset[0];
                let fj = j as f64 + m.frac[1] + cfg.offset[1];
                let x = centre + fi * r1[0] + fj * r2[0];
                let y = centre + fi * r1[1] + fj * r2[1];
                let sigma = sp.sigma * cfg.scale;
                let margin = 2.0 * sigma;
                if x >= -margin && x < size + margin && y >= -margin && y < size + margin {
                    sites.push(AtomSite {
                        x,
                        y,
                        sigma,
                        rel_brightness: sp.rel_brightness,
                    });
                }
            }
        }
    }
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Mode;
    use crate::synthesis::Arrangement;

    fn square(a: f64) -> LatticeSpec {
        let mut species = BTreeMap::new();
        species.insert(
            "X".to_string(),
            Species {
                rel_brightness: 1.0,
                sigma: 0.2,
            },
        );
        LatticeSpec {
            name: "square".into(),
            a1: [a, 0.0],
            a2: [0.0, a],
            motif: vec![MotifSite {
                frac: [0.0, 0.0],
                species: "X".into(),
            }],
            species,
        }
    }

    fn cfg(scale: f64, rotation: f64) -> SceneConfig {
        SceneConfig {
            mode: Mode::Haadf,
            size: 256,
            scale,
            rotation,
            offset: [0.0, 0.0],
            arrangement: Arrangement::Periodic,
            seed: 0,
        }
    }

    fn nn(sites: &[AtomSite]) -> Vec<f64> {
        sites
            .iter()
            .enumerate()
            .map(|(i, a)| {
                sites
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| (a.x - b.x).hypot(a.y - b.y))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn presets_load_and_count() {
        let p = lattice_presets();
        assert_eq!(p.len(), 15);
        assert!(lattice_preset("sb2se3-001").is_some());
        assert!(lattice_preset("gaas-110").is_some());
        for s in p {
            assert!(s.nn_distance() > 0.1, "{}", s.name);
        }
    }

    #[test]
    fn square_lattice_counts_and_spacing() {
        let sites = build_periodic(&square(1.0), &cfg(16.0, 0.0)).unwrap();
        // 16 columns inside plus at most one extra row/column within the 2σ margin
        let inside = sites
            .iter()
            .filter(|s| s.x >= 0.0 && s.x < 256.0 && s.y >= 0.0 && s.y < 256.0)
            .count();
        assert_eq!(inside, 256);
        assert!(sites.len() <= 17 * 17);
        for d in nn(&sites) {
            assert!((d - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_spacing() {
        let sites = build_periodic(&square(1.0), &cfg(16.0, 45.0)).unwrap();
        for d in nn(&sites) {
            assert!((d - 16.0).abs() < 1e-6);
        }
    }

    #[test]
    fn doubling_scale_quarters_count() {
        let a = build_periodic(&square(1.0), &cfg(8.0, 13.0)).unwrap().len() as f64;
        let b = build_periodic(&square(1.0), &cfg(16.0, 13.0)).unwrap().len() as f64;
        assert!((a / b - 4.0).abs() < 0.4, "{a} {b}");
    }

    #[test]
    fn degenerate_basis_rejected() {
        let mut s = square(1.0);
        s.a2 = [2.0, 0.0];
        assert!(build_periodic(&s, &cfg(16.0, 0.0)).is_err());
    }
}
