use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_defects, apply_embeddings, build_periodic, build_random, render_clean, render_detect_label, render_sr_label,
    Arrangement, AtomSite, LatticeSpec, SceneConfig,
};
use crate::calibration::ProfileStats;
use crate::error::{Error, Result};
use crate::image::{write_png16, ImageGray};
use crate::noise::{
    apply_noise, BackgroundParams, Mode, NoiseProfile, PointwiseParams, ScanNoiseParams, PROFILE_FIELDS,
};
use crate::rng::SeededRng;

pub const MANIFEST_FILE: &str = "manifest.csv";
const SPLITS: [&str; 2] = ["train", "test"];

/// Generator settings beyond the noise profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    /// Nearest-neighbour spacing range in pixels, sampled log-uniformly.
    pub spacing_range: [f64; 2],
    /// Weights of periodic, defects, embeddings and random arrangements.
    pub arrangement_weights: [f64; 4],
    pub p_delete_range: [f64; 2],
    pub p_add_range: [f64; 2],
    /// Random scenes hold `random_fill / spacing^2` sites per square pixel.
    pub random_fill: f64,
    /// Random spot widths as a fraction of the spacing.
    pub random_sigma_frac: [f64; 2],
    pub random_brightness: [f64; 2],
    pub bg_lattice: f64,
    pub sr_shrink: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 256,
            spacing_range: [8.0, 32.0],
            arrangement_weights: [0.55, 0.15, 0.15, 0.15],
            p_delete_range: [0.05, 0.2],
            p_add_range: [0.05, 0.2],
            random_fill: 0.6,
            random_sigma_frac: [0.15, 0.25],
            random_brightness: [0.4, 1.0],
            bg_lattice: crate::noise::DEFAULT_BG_LATTICE,
            sr_shrink: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.spacing_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!("invalid spacing range [{lo}, {hi}]")));
        }
        if self.arrangement_weights.iter().any(|w| !(*w >= 0.0)) || self.arrangement_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::param(
                "arrangement weights must be non-negative with a positive sum",
            ));
        }
        if self.size < 16 {
            return Err(Error::param(format!("frame size {} is below 16 px", self.size)));
        }
        Ok(())
    }
}

/// One generated pair with its labels and ground-truth parameters.
#[derive(Clone, Debug)]
pub struct DatasetSample {
    pub noisy: ImageGray,
    pub clean: ImageGray,
    pub detect_label: ImageGray,
    pub sr_label: ImageGray,
    pub profile: NoiseProfile,
    pub scene: SceneConfig,
    pub sites: Vec<AtomSite>,
    pub spec: String,
}

/// Per-sample parameter document written next to the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub split: String,
    pub index: usize,
    pub seed: u64,
    pub spec: String,
    pub profile: NoiseProfile,
    pub scene: SceneConfig,
    pub sites: Vec<AtomSite>,
}

fn normal_clamped(rng: &mut SeededRng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let v = if std > 0.0 { rng.normal(mean, std) } else { mean };
    v.clamp(lo, hi)
}

/// Draw one profile from corpus statistics.
///
/// Every parameter is normal around its mean and clamped to its valid range.
/// `b_atom` is also kept inside the corpus range and capped so the brightest
/// column stays one pointwise std away from saturation.
pub fn sample_profile(stats: &ProfileStats, rng: &mut SeededRng) -> NoiseProfile {
    let (m, s) = (&stats.mean, &stats.std);
    let pw_lambda = normal_clamped(rng, m.pw_lambda, s.pw_lambda, -0.49, 1.0);
    let pw_b = normal_clamped(rng, m.pw_b, s.pw_b, 0.0, f64::INFINITY);
    let pw_k = normal_clamped(rng, m.pw_k, s.pw_k, -pw_b / 255.0, f64::INFINITY);
    let scan_k = normal_clamped(rng, m.scan_k, s.scan_k, 0.0, f64::INFINITY);
    let scan_b = normal_clamped(rng, m.scan_b, s.scan_b, 0.0, f64::INFINITY);
    let a = normal_clamped(rng, m.bg_min, s.bg_min, 0.0, 255.0);
    let b = normal_clamped(rng, m.bg_max, s.bg_max, 0.0, 255.0);
    let (bg_min, bg_max) = (a.min(b), a.max(b));
    let pointwise = PointwiseParams {
        k: pw_k,
        b: pw_b,
        lambda: pw_lambda,
    };
    let cap = match stats.mode {
        Mode::Haadf => 255.0 - bg_max - pointwise.sigma_at(255.0),
        Mode::Bf => bg_min - pointwise.sigma_at(0.0),
    };
    let lo = stats.atom_brightness_min.min(stats.mean.b_atom).max(1.0);
    let hi = stats.atom_brightness_max.max(stats.mean.b_atom).min(cap.max(1.0));
    let b_atom = normal_clamped(rng, m.b_atom, s.b_atom, lo.min(hi), hi);
    NoiseProfile {
        b_atom,
        background: BackgroundParams {
            b_min: bg_min,
            b_max: bg_max,
            lattice: crate::noise::DEFAULT_BG_LATTICE,
        },
        scan: ScanNoiseParams { k: scan_k, b: scan_b },
        pointwise,
        mode: stats.mode,
    }
}

fn pick_weighted(rng: &mut SeededRng, w: &[f64; 4]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.uniform() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Generate sample `index` of a dataset seeded with `seed`. The result
/// depends only on the arguments, never on generation order.
pub fn synth_sample(
    specs: &[LatticeSpec],
    stats: &ProfileStats,
    cfg: &SynthConfig,
    seed: u64,
    index: u64,
) -> Result<DatasetSample> {
    if specs.is_empty() {
        return Err(Error::param("no lattice specs given"));
    }
    cfg.validate()?;
    let sample_seed = crate::rng::child_seed(seed, index);
    let mut rng = SeededRng::new(sample_seed);
    let kind = pick_weighted(&mut rng, &cfg.arrangement_weights);
    let spec = &specs[rng.index(specs.len())];
    let [lo, hi] = cfg.spacing_range;
    let spacing = (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp();
    let scale = spacing / spec.nn_distance();
    let rotation = rng.uniform_range(0.0, 360.0);
    let offset = [rng.uniform(), rng.uniform()];
    let arrangement = match kind {
        0 => Arrangement::Periodic,
        1 => Arrangement::Defects {
            p_delete: rng.uniform_range(cfg.p_delete_range[0], cfg.p_delete_range[1]),
        },
        2 => Arrangement::Embeddings {
            p_add: rng.uniform_range(cfg.p_add_range[0], cfg.p_add_range[1]),
        },
        _ => Arrangement::Random {
            density: cfg.random_fill / (spacing * spacing),
        },
    };
    let scene = SceneConfig {
        mode: stats.mode,
        size: cfg.size,
        scale,
        rotation,
        offset,
        arrangement: arrangement.clone(),
        seed: sample_seed,
    };
    let (sig_range, bright_range) = spec.species_ranges();
    let sig_px = [sig_range[0] * scale, sig_range[1] * scale];
    let sites = match arrangement {
        Arrangement::Periodic => build_periodic(spec, &scene)?,
        Arrangement::Defects { p_delete } => apply_defects(&build_periodic(spec, &scene)?, p_delete, &mut rng)?,
        Arrangement::Embeddings { p_add } => apply_embeddings(
            &build_periodic(spec, &scene)?,
            p_add,
            cfg.size,
            sig_px,
            bright_range,
            &mut rng,
        )?,
        Arrangement::Random { density } => {
            let s = [cfg.random_sigma_frac[0] * spacing, cfg.random_sigma_frac[1] * spacing];
            build_random(cfg.size, density, s, cfg.random_brightness, &mut rng)?
        }
    };
    let mut profile = sample_profile(stats, &mut rng);
    profile.background.lattice = cfg.bg_lattice;
    let signed = render_clean(&sites, &scene, profile.b_atom, 0.0)?;
    let comps = apply_noise(&signed, &profile, &mut rng)?;
    let clean = match profile.mode {
        Mode::Haadf => signed,
        Mode::Bf => signed.map(|v| 255.0 + v),
    };
    Ok(DatasetSample {
        noisy: comps.noisy,
        detect_label: render_detect_label(&sites, &scene),
        sr_label: render_sr_label(&sites, &scene, cfg.sr_shrink)?,
        clean,
        profile,
        scene,
        sites,
        spec: spec.name.clone(),
    })
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub split: String,
    pub index: usize,
    pub arrangement: String,
    pub spec: String,
    pub seed: u64,
    pub profile: NoiseProfile,
    /// Paths relative to the dataset root.
    pub noisy: String,
    pub clean: String,
    pub detect: String,
    pub sr: String,
    pub params: String,
}

const FILE_COLUMNS: [&str; 5] = ["noisy", "clean", "detect", "sr", "params"];

fn manifest_header() -> String {
    let mut cols = vec!["split", "index", "arrangement", "spec", "seed"];
    cols.extend(PROFILE_FIELDS);
    cols.push("mode");
    cols.extend(FILE_COLUMNS);
    cols.join(",")
}

impl ManifestRow {
    fn to_line(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{}",
            self.split, self.index, self.arrangement, self.spec, self.seed
        );
        for v in self.profile.flat().values() {
            write!(s, ",{v}").unwrap();
        }
        write!(
            s,
            ",{},{},{},{},{},{}",
            self.profile.mode, self.noisy, self.clean, self.detect, self.sr, self.params
        )
        .unwrap();
        s
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 19 {
            return Err(Error::param(format!(
                "manifest row has {} fields, expected 19",
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::param(format!("bad number {:?} in manifest", f[i])))
        };
        let mut vals = [0.0; 8];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = num(5 + i)?;
        }
        let mode: Mode = f[13].parse()?;
        Ok(ManifestRow {
            split: f[0].to_string(),
            index: f[1].parse().map_err(|_| Error::param("bad manifest index"))?,
            arrangement: f[2].to_string(),
            spec: f[3].to_string(),
            seed: f[4].parse().map_err(|_| Error::param("bad manifest seed"))?,
            profile: crate::noise::FlatProfile::from_values(vals, mode).into(),
            noisy: f[14].to_string(),
            clean: f[15].to_string(),
            detect: f[16].to_string(),
            sr: f[17].to_string(),
            params: f[18].to_string(),
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == manifest_header() => {}
        _ => return Err(Error::param(format!("{}: unexpected manifest header", path.display()))),
    }
    lines.filter(|l| !l.is_empty()).map(ManifestRow::parse).collect()
}

fn write_sample(root: &Path, split: &str, local: usize, seed: u64, s: &DatasetSample) -> Result<ManifestRow> {
    let rel = format!("{split}/{local:04}");
    let dir = root.join(&rel);
    let write_all = || -> Result<()> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_png16(&dir.join("noisy.png"), &s.noisy)?;
        write_png16(&dir.join("clean.png"), &s.clean)?;
        write_png16(&dir.join("detect.png"), &s.detect_label)?;
        write_png16(&dir.join("sr.png"), &s.sr_label)?;
        let record = SampleRecord {
            split: split.to_string(),
            index: local,
            seed,
            spec: s.spec.clone(),
            profile: s.profile,
            scene: s.scene.clone(),
            sites: s.sites.clone(),
        };
        let json = serde_json::to_string_pretty(&record)?;
        let p = dir.join("params.json");
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&dir);
        return Err(e);
    }
    Ok(ManifestRow {
        split: split.to_string(),
        index: local,
        arrangement: s.scene.arrangement.name().to_string(),
        spec: s.spec.clone(),
        seed,
        profile: s.profile,
        noisy: format!("{rel}/noisy.png"),
        clean: format!("{rel}/clean.png"),
        detect: format!("{rel}/detect.png"),
        sr: format!("{rel}/sr.png"),
        params: format!("{rel}/params.json"),
    })
}

/// Generate and write a paired dataset; returns the manifest path.
///
/// Layout: `<out>/<split>/<index>/{noisy,clean,detect,sr}.png` plus
/// `params.json`, and `<out>/manifest.csv` ordered by split and index.
/// Samples are produced in parallel on the current rayon pool; the output is
/// identical for any worker count. On failure the incomplete sample
/// directory is removed and no manifest is written.
pub fn synth_dataset(
    specs: &[LatticeSpec],
    stats: &ProfileStats,
    cfg: &SynthConfig,
    n_train: usize,
    n_test: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = out_dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
    }
    let jobs: Vec<(&str, usize, u64)> = (0..n_train)
        .map(|i| (SPLITS[0], i, i as u64))
        .chain((0..n_test).map(|i| (SPLITS[1], i, (n_train + i) as u64)))
        .collect();
    let rows: Vec<ManifestRow> = jobs
        .par_iter()
        .map(|&(split, local, global)| {
            let sample = synth_sample(specs, stats, cfg, seed, global)?;
            write_sample(out_dir, split, local, crate::rng::child_seed(seed, global), &sample)
        })
        .collect::<Result<_>>()?;
    let mut text = manifest_header();
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::lattice_presets;

    #[test]
    fn zero_spread_gives_means() {
        let mut stats = ProfileStats::preset("haadf-real").unwrap();
        stats.std = Default::default();
        let mut rng = SeededRng::new(1);
        for _ in 0..10 {
            let p = sample_profile(&stats, &mut rng);
            assert_eq!(crate::calibration::ParamSet::from_profile(&p), stats.mean);
        }
    }

    #[test]
    fn sampled_means_and_invariants() {
        for name in ProfileStats::PRESET_NAMES {
            let stats = ProfileStats::preset(name).unwrap();
            let mut rng = SeededRng::new(2);
            let draws: Vec<NoiseProfile> = (0..1000).map(|_| sample_profile(&stats, &mut rng)).collect();
            for p in &draws {
                p.validate().unwrap();
            }
            let m = ProfileStats::from_profiles(&draws).unwrap().mean.values();
            let want = stats.mean.values();
            let sd = stats.std.values();
            // b_atom (index 0) is truncated by the saturation cap
            for i in 1..8 {
                let se = sd[i] / (1000f64).sqrt();
                assert!(
                    (m[i] - want[i]).abs() <= 3.0 * se + 1e-12,
                    "{name} param {i}: {} vs {}",
                    m[i],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn sample_is_deterministic_and_consistent() {
        let stats = ProfileStats::preset("haadf-real").unwrap();
        let cfg = SynthConfig {
            size: 96,
            ..Default::default()
        };
        let a = synth_sample(lattice_presets(), &stats, &cfg, 5, 3).unwrap();
        let b = synth_sample(lattice_presets(), &stats, &cfg, 5, 3).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_eq!(a.sites, b.sites);
        for img in [&a.clean, &a.detect_label, &a.sr_label] {
            assert_eq!(img.dims(), a.noisy.dims());
        }
    }

    #[test]
    fn bf_background_brighter_than_atoms() {
        let stats = ProfileStats::preset("bf-real").unwrap();
        let cfg = SynthConfig {
            size: 128,
            arrangement_weights: [1.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        let s = synth_sample(lattice_presets(), &stats, &cfg, 9, 0).unwrap();
        assert!(s.clean.max() > 255.0 - 0.1 * s.profile.b_atom && s.clean.max() <= 255.0);
        assert!(s.clean.min() < 255.0 - 0.9 * s.profile.b_atom);
    }

    #[test]
    fn manifest_line_round_trip() {
        let stats = ProfileStats::preset("haadf-real").unwrap();
        let row = ManifestRow {
            split: "train".into(),
            index: 7,
            arrangement: "periodic".into(),
            spec: "au-001".into(),
            seed: 42,
            profile: stats.mean.to_profile(Mode::Haadf),
            noisy: "train/0007/noisy.png".into(),
            clean: "train/0007/clean.png".into(),
            detect: "train/0007/detect.png".into(),
            sr: "train/0007/sr.png".into(),
            params: "train/0007/params.json".into(),
        };
        assert_eq!(ManifestRow::parse(&row.to_line()).unwrap(), row);
    }
}
