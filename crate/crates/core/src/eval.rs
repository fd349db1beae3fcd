//! Dataset realism (parameter histograms, KLD, R²) and enhancement scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationReport;
use crate::error::{Error, Result};
use crate::image::{psnr, ssim, ImageGray};
use crate::noise::{FlatProfile, Mode, NoiseProfile};

/// Additive smoothing applied to every bin before normalization.
pub const KLD_EPSILON: f64 = 1e-6;
pub const REALISM_BINS: usize = 16;
pub const MIN_CORPUS: usize = 10;
/// Peak value used for PSNR on 8-bit scaled images.
pub const PSNR_PEAK: f64 = 255.0;

/// The seven compared parameters. Background pools each image's minimum
/// and maximum into one sample.
pub const REALISM_PARAMS: [&str; 7] = ["b_atom", "background", "scan_k", "scan_b", "pw_k", "pw_b", "pw_lambda"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHistogram {
    pub name: String,
    pub corpus: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ParamHistogram {
    /// Bins `values` on `edges`; the last bin is closed on the right.
    /// Values outside the edges are a parameter error.
    pub fn new(name: &str, corpus: &str, edges: Vec<f64>, values: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param(
                "histogram edges must be strictly increasing with at least one bin",
            ));
        }
        let nb = edges.len() - 1;
        let (lo, hi) = (edges[0], edges[nb]);
        let mut counts = vec![0; nb];
        for &v in values {
            if !(v >= lo && v <= hi) {
                return Err(Error::param(format!(
                    "{name}: value {v} outside histogram range [{lo}, {hi}]"
                )));
            }
            // first edge strictly above v, minus one
            let i = edges.partition_point(|&e| e <= v).saturating_sub(1).min(nb - 1);
            counts[i] += 1;
        }
        Ok(Self {
            name: name.to_string(),
            corpus: corpus.to_string(),
            edges,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Bin probabilities after adding `eps` to every count.
    pub fn probabilities(&self, eps: f64) -> Vec<f64> {
        let total = self.total() as f64 + eps * self.counts.len() as f64;
        self.counts.iter().map(|&c| (c as f64 + eps) / total).collect()
    }
}

/// `n_bins` equal-width edges spanning the pooled range of both samples.
/// A degenerate range is widened symmetrically so edges stay increasing.
pub fn shared_edges(a: &[f64], b: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(Error::param("need at least one histogram bin"));
    }
    let all = a.iter().chain(b);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in all {
        if !v.is_finite() {
            return Err(Error::param(format!("non-finite parameter value {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return Err(Error::param("cannot bin empty samples"));
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = 1e-3 * lo.abs().max(1.0);
        lo -= pad;
        hi += pad;
    }
    let step = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + step * i as f64).collect();
    edges.push(hi);
    Ok(edges)
}

/// Kullback-Leibler divergence `sum p ln(p/q)` of the smoothed histograms.
pub fn kld(p: &ParamHistogram, q: &ParamHistogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::param(format!(
            "histograms of {} ({}) and {} ({}) use different bin edges",
            p.name, p.corpus, q.name, q.corpus
        )));
    }
    let pp = p.probabilities(KLD_EPSILON);
    let qq = q.probabilities(KLD_EPSILON);
    let d: f64 = pp.iter().zip(&qq).map(|(a, b)| a * (a / b).ln()).sum();
    // rounding can leave a tiny negative when p == q
    Ok(d.max(0.0))
}

/// Coefficient of determination of a curve against a reference curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2 {
    Value(f64),
    /// The reference curve is constant, so R² is undefined.
    ZeroVariance,
}

impl R2 {
    pub fn value(self) -> Option<f64> {
        match self {
            R2::Value(v) => Some(v),
            R2::ZeroVariance => None,
        }
    }
}

impl std::fmt::Display for R2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            R2::Value(v) => write!(f, "{v:.4}"),
            R2::ZeroVariance => f.write_str("n/a"),
        }
    }
}

/// `1 - SS_res / SS_tot` of `synthetic` against `real`.
pub fn r2(synthetic: &[f64], real: &[f64]) -> Result<R2> {
    if synthetic.len() != real.len() || real.is_empty() {
        return Err(Error::param(format!(
            "curves must have matching non-zero length, got {} and {}",
            synthetic.len(),
            real.len()
        )));
    }
    let mean = real.iter().sum::<f64>() / real.len() as f64;
    let ss_tot: f64 = real.iter().map(|r| (r - mean).powi(2)).sum();
    if ss_tot <= 1e-300 {
        return Ok(R2::ZeroVariance);
    }
    let ss_res: f64 = synthetic.iter().zip(real).map(|(s, r)| (s - r).powi(2)).sum();
    Ok(R2::Value(1.0 - ss_res / ss_tot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismRow {
    pub parameter: String,
    /// KLD(a || b).
    pub kld_ab: f64,
    /// KLD(b || a).
    pub kld_ba: f64,
    /// R² of a's bin probabilities against b's.
    pub r2: R2,
    pub hist_a: ParamHistogram,
    pub hist_b: ParamHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismTable {
    pub corpus_a: String,
    pub corpus_b: String,
    pub mode: Mode,
    pub rows: Vec<RealismRow>,
}

impl RealismTable {
    pub fn row(&self, parameter: &str) -> Option<&RealismRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "corpus a: {}\ncorpus b: {}\nmode: {}\n{:<12} {:>12} {:>12} {:>10}\n",
            self.corpus_a,
            self.corpus_b,
            self.mode.as_str(),
            "parameter",
            "kld(a||b)",
            "kld(b||a)",
            "r2"
        );
        for r in &self.rows {
            s += &format!(
                "{:<12} {:>12.6} {:>12.6} {:>10}\n",
                r.parameter,
                r.kld_ab,
                r.kld_ba,
                r.r2.to_string()
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,kld_ab,kld_ba,r2\n");
        for r in &self.rows {
            let r2 = r.r2.value().map(|v| v.to_string()).unwrap_or_default();
            s += &format!("{},{},{},{}\n", r.parameter, r.kld_ab, r.kld_ba, r2);
        }
        s
    }
}

fn param_samples(profiles: &[NoiseProfile], name: &str) -> Vec<f64> {
    let flat: Vec<FlatProfile> = profiles.iter().map(|p| p.flat()).collect();
    match name {
        "b_atom" => flat.iter().map(|f| f.b_atom).collect(),
        "background" => flat.iter().flat_map(|f| [f.bg_min, f.bg_max]).collect(),
        "scan_k" => flat.iter().map(|f| f.scan_k).collect(),
        "scan_b" => flat.iter().map(|f| f.scan_b).collect(),
        "pw_k" => flat.iter().map(|f| f.pw_k).collect(),
        "pw_b" => flat.iter().map(|f| f.pw_b).collect(),
        "pw_lambda" => flat.iter().map(|f| f.pw_lambda).collect(),
        _ => unreachable!("unknown realism parameter {name}"),
    }
}

fn corpus_mode(profiles: &[NoiseProfile], id: &str) -> Result<Mode> {
    let mode = profiles[0].mode;
    if profiles.iter().any(|p| p.mode != mode) {
        return Err(Error::param(format!("corpus {id} mixes HAADF and BF profiles")));
    }
    Ok(mode)
}

/// Realism table comparing two corpora of per-image profiles.
pub fn compare_profiles(a: &[NoiseProfile], b: &[NoiseProfile], id_a: &str, id_b: &str) -> Result<RealismTable> {
    for (p, id) in [(a, id_a), (b, id_b)] {
        if p.len() < MIN_CORPUS {
            return Err(Error::param(format!(
                "corpus {id} has {} profiles, need at least {MIN_CORPUS}",
                p.len()
            )));
        }
    }
    let mode = corpus_mode(a, id_a)?;
    if corpus_mode(b, id_b)? != mode {
        return Err(Error::param(format!(
            "corpora {id_a} and {id_b} have different imaging modes"
        )));
    }
    let rows = REALISM_PARAMS
        .iter()
        .map(|&name| {
            let (sa, sb) = (param_samples(a, name), param_samples(b, name));
            let edges = shared_edges(&sa, &sb, REALISM_BINS)?;
            let hist_a = ParamHistogram::new(name, id_a, edges.clone(), &sa)?;
            let hist_b = ParamHistogram::new(name, id_b, edges, &sb)?;
            Ok(RealismRow {
                parameter: name.to_string(),
                kld_ab: kld(&hist_a, &hist_b)?,
                kld_ba: kld(&hist_b, &hist_a)?,
                r2: r2(&hist_a.probabilities(0.0), &hist_b.probabilities(0.0))?,
                hist_a,
                hist_b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RealismTable {
        corpus_a: id_a.to_string(),
        corpus_b: id_b.to_string(),
        mode,
        rows,
    })
}

/// Realism table comparing the profiles of two sets of calibration reports.
pub fn compare_datasets(a: &[CalibrationReport], b: &[CalibrationReport]) -> Result<RealismTable> {
    let pa: Vec<NoiseProfile> = a.iter().map(|r| r.profile).collect();
    let pb: Vec<NoiseProfile> = b.iter().map(|r| r.profile).collect();
    compare_profiles(&pa, &pb, "a", "b")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    /// `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

pub fn score_pair(output: &ImageGray, reference: &ImageGray) -> Result<PairScore> {
    Ok(PairScore {
        psnr: psnr(output, reference, PSNR_PEAK)?,
        ssim: ssim(output, reference)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancementScore {
    /// Mean over finite PSNRs; infinite when every pair was identical.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub pairs: usize,
    /// Pairs with infinite PSNR, left out of `mean_psnr`.
    pub infinite_psnr: usize,
}

/// Mean PSNR and SSIM over `(output, reference)` pairs.
pub fn score_enhancement(pairs: &[(&ImageGray, &ImageGray)]) -> Result<EnhancementScore> {
    if pairs.is_empty() {
        return Err(Error::param("no image pairs to score"));
    }
    let scores = pairs
        .par_iter()
        .map(|(o, r)| score_pair(o, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&scores))
}

/// Aggregates already computed pair scores.
pub fn summarize(scores: &[PairScore]) -> EnhancementScore {
    let finite: Vec<f64> = scores.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
    let mean_psnr = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    EnhancementScore {
        mean_psnr,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / scores.len().max(1) as f64,
        pairs: scores.len(),
        infinite_psnr: scores.len() - finite.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ProfileStats;
    use crate::rng::SeededRng;
    use crate::synthesis::sample_profile;

    fn hist(counts: Vec<usize>) -> ParamHistogram {
        let n = counts.len();
        ParamHistogram {
            name: "x".into(),
            corpus: "c".into(),
            edges: (0..=n).map(|i| i as f64).collect(),
            counts,
        }
    }

    #[test]
    fn kld_examples() {
        let p = hist(vec![3, 1, 0, 6, 2, 0, 0, 1, 4, 3]);
        assert!(kld(&p, &p).unwrap().abs() < 1e-9);
        let a = hist(vec![10, 10, 10, 10, 10, 0, 0, 0, 0, 0]);
        let b = hist(vec![0, 0, 0, 0, 0, 10, 10, 10, 10, 10]);
        let d = kld(&a, &b).unwrap();
        assert!(d.is_finite() && d > 5.0, "{d}");
        let mut c = hist(vec![1; 10]);
        c.edges[3] = 2.5;
        assert!(kld(&a, &c).is_err());
    }

    #[test]
    fn histogram_binning_and_invariants() {
        let edges = shared_edges(&[0.0, 1.0], &[4.0], 4).unwrap();
        assert_eq!(edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let h = ParamHistogram::new("x", "c", edges.clone(), &[0.0, 0.5, 1.0, 3.9, 4.0]).unwrap();
        assert_eq!(h.counts, vec![2, 1, 0, 2]);
        assert_eq!(h.total(), 5);
        assert!(ParamHistogram::new("x", "c", edges, &[4.5]).is_err());
        assert!(ParamHistogram::new("x", "c", vec![1.0, 1.0], &[]).is_err());
        // constant samples still get increasing edges
        let e = shared_edges(&[2.0; 5], &[2.0; 3], 16).unwrap();
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(ParamHistogram::new("x", "c", e, &[2.0; 5]).unwrap().total(), 5);
    }

    #[test]
    fn r2_examples() {
        let real = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert_eq!(r2(&real, &real).unwrap(), R2::Value(1.0));
        assert!(r2(&[3.0; 5], &real).unwrap().value().unwrap().abs() < 1e-12);
        let anti: Vec<f64> = real.iter().map(|v| 6.0 - v).collect();
        assert!(r2(&anti, &real).unwrap().value().unwrap() < 0.0);
        assert_eq!(r2(&real, &[2.0; 5]).unwrap(), R2::ZeroVariance);
        assert!(r2(&real[..3], &real).is_err());
    }

    fn corpus(n: usize, seed: u64, mode: Mode) -> Vec<NoiseProfile> {
        let preset = if mode == Mode::Haadf { "haadf-real" } else { "bf-real" };
        let stats = ProfileStats::preset(preset).unwrap();
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| sample_profile(&stats, &mut rng)).collect()
    }

    #[test]
    fn corpus_against_itself() {
        let a = corpus(30, 1, Mode::Haadf);
        let t = compare_profiles(&a, &a, "a", "a").unwrap();
        assert_eq!(t.rows.len(), 7);
        for r in &t.rows {
            assert!(r.kld_ab.abs() < 1e-9 && r.kld_ba.abs() < 1e-9, "{}", r.parameter);
            assert_eq!(r.r2, R2::Value(1.0));
        }
        assert_eq!(t.row("background").unwrap().hist_a.total(), 60);
        assert!(t.to_csv().lines().count() == 8);
        assert!(t.to_text().contains("pw_lambda"));
    }

    #[test]
    fn halves_of_one_corpus_beat_a_shifted_corpus() {
        let all = corpus(100, 2, Mode::Haadf);
        let shifted: Vec<NoiseProfile> = corpus(50, 5, Mode::Haadf)
            .iter()
            .map(|p| {
                let mut f = p.flat();
                f.b_atom *= 1.5;
                f.bg_min *= 1.5;
                f.bg_max *= 1.5;
                f.scan_k *= 1.5;
                f.scan_b *= 1.5;
                f.pw_k *= 1.5;
                f.pw_b *= 1.5;
                f.pw_lambda += 0.3;
                f.into()
            })
            .collect();
        let same = compare_profiles(&all[..50], &all[50..], "h1", "h2").unwrap();
        let other = compare_profiles(&all[..50], &shifted, "h1", "x").unwrap();
        for (s, o) in same.rows.iter().zip(&other.rows) {
            assert!(
                s.kld_ab.is_finite() && s.kld_ab < o.kld_ab,
                "{}: {} vs {}",
                s.parameter,
                s.kld_ab,
                o.kld_ab
            );
            assert!(s.kld_ba < o.kld_ba, "{}: {} vs {}", s.parameter, s.kld_ba, o.kld_ba);
        }
    }

    #[test]
    fn kld_is_asymmetric() {
        let a = hist(vec![8, 1, 1]);
        let b = hist(vec![3, 3, 4]);
        assert!((kld(&a, &b).unwrap() - kld(&b, &a).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn corpus_errors() {
        let a = corpus(12, 3, Mode::Haadf);
        assert!(compare_profiles(&a[..9], &a, "a", "b").is_err());
        let b = corpus(12, 4, Mode::Bf);
        assert!(compare_profiles(&a, &b, "a", "b").is_err());
        let mut mixed = a.clone();
        mixed[0] = b[0];
        assert!(compare_profiles(&mixed, &a, "a", "b").is_err());
    }

    #[test]
    fn enhancement_scores() {
        let a = ImageGray::from_fn(32, 32, |x, y| (x * 7 + y * 3) as f64);
        let b = a.map(|v| v + 10.0);
        let s = score_enhancement(&[(&a, &a), (&a, &a)]).unwrap();
        assert!(s.mean_psnr.is_infinite() && s.infinite_psnr == 2 && s.mean_ssim == 1.0);
        let s = score_enhancement(&[(&b, &a), (&a, &a)]).unwrap();
        assert!((s.mean_psnr - 28.1308).abs() < 1e-3);
        assert_eq!(s.infinite_psnr, 1);
        let r = score_enhancement(&[(&a, &a), (&b, &a)]).unwrap();
        assert_eq!(r, s);
        assert!(score_enhancement(&[]).is_err());
    }
}
