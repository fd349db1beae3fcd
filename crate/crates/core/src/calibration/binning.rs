use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One equal-width bin of a binned-statistics fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Measured noise std in the bin (NaN for empty bins).
    pub std: f64,
    /// Fitted model std at the bin (NaN where not evaluated).
    pub model_std: f64,
    pub kept: bool,
}

impl BinStat {
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Equal-width bin assignment over `[min, max]` of `x`.
pub(crate) struct Bins {
    pub lo: f64,
    pub width: f64,
    pub n: usize,
    pub idx: Vec<usize>,
    pub counts: Vec<usize>,
}

impl Bins {
    pub fn new(x: &[f64], n: usize) -> Result<Self> {
        if x.is_empty() || n == 0 {
            return Err(Error::Fit("no samples to bin".into()));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / n as f64 } else { 1.0 };
        let mut counts = vec![0; n];
        let idx: Vec<usize> = x
            .iter()
            .map(|&v| {
                let i = (((v - lo) / width) as usize).min(n - 1);
                counts[i] += 1;
                i
            })
            .collect();
        Ok(Bins {
            lo,
            width,
            n,
            idx,
            counts,
        })
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        (self.lo + i as f64 * self.width, self.lo + (i + 1) as f64 * self.width)
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }

    /// Bins holding at least `min_frac` of all samples.
    pub fn kept(&self, min_frac: f64) -> Vec<bool> {
        let total = self.idx.len() as f64;
        self.counts
            .iter()
            .map(|&c| c > 0 && c as f64 >= min_frac * total)
            .collect()
    }

    pub fn means(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (&i, &x) in self.idx.iter().zip(v) {
            s[i] += x;
        }
        s.iter()
            .zip(&self.counts)
            .map(|(a, &c)| if c > 0 { a / c as f64 } else { f64::NAN })
            .collect()
    }

    /// Per-bin sample standard deviation (n - 1 denominator).
    pub fn stds(&self, v: &[f64]) -> Vec<f64> {
        let m = self.means(v);
        let mut ss = vec![0.0; self.n];
        for (&i, &x) in self.idx.iter().zip(v) {
            ss[i] += (x - m[i]).powi(2);
        }
        ss.iter()
            .zip(&self.counts)
            .map(|(s, &c)| if c > 1 { (s / (c - 1) as f64).sqrt() } else { f64::NAN })
            .collect()
    }
}

/// Ordinary least squares `y = k x + b`; returns `(k, b, r2)`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(Error::Fit("at least two points are needed for a line fit".into()));
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("line fit needs distinct abscissae".into()));
    }
    let k = sxy / sxx;
    let b = my - k * mx;
    let pred: Vec<f64> = x.iter().map(|a| k * a + b).collect();
    Ok((k, b, r_squared(y, &pred)))
}

/// `1 - SS_res / SS_tot` of `pred` against `obs`; NaN for constant `obs`.
pub fn r_squared(obs: &[f64], pred: &[f64]) -> f64 {
    let n = obs.len() as f64;
    let m = obs.iter().sum::<f64>() / n;
    let ss_tot: f64 = obs.iter().map(|o| (o - m).powi(2)).sum();
    let ss_res: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    if ss_tot <= 0.0 {
        return f64::NAN;
    }
    1.0 - ss_res / ss_tot
}

/// Per-bin coefficients of the variance model `k² a2 + k b a1 + b² a0`.
pub(crate) struct MomentBins {
    pub target: Vec<f64>,
    pub a2: Vec<f64>,
    pub a1: Vec<f64>,
    pub a0: Vec<f64>,
    pub weight: Vec<f64>,
}

fn model_var(m: &MomentBins, i: usize, k: f64, b: f64) -> f64 {
    k * k * m.a2[i] + k * b * m.a1[i] + b * b * m.a0[i]
}

fn cost(m: &MomentBins, k: f64, b: f64) -> f64 {
    (0..m.target.len())
        .map(|i| {
            let r = m.target[i].max(0.0).sqrt() - model_var(m, i, k, b).max(0.0).sqrt();
            m.weight[i] * r * r
        })
        .sum()
}

/// Weighted Gauss-Newton in the std domain, started at `(k, b)`.
pub(crate) fn fit_moments(m: &MomentBins, mut k: f64, mut b: f64) -> (f64, f64) {
    let mut c = cost(m, k, b);
    for _ in 0..100 {
        let (mut jtj, mut jtr) = ([0.0; 3], [0.0; 2]);
        for i in 0..m.target.len() {
            let pv = model_var(m, i, k, b).max(1e-12);
            let sp = pv.sqrt();
            let r = m.target[i].max(0.0).sqrt() - sp;
            let jk = (2.0 * k * m.a2[i] + b * m.a1[i]) / (2.0 * sp);
            let jb = (k * m.a1[i] + 2.0 * b * m.a0[i]) / (2.0 * sp);
            let w = m.weight[i];
            jtj[0] += w * jk * jk;
            jtj[1] += w * jk * jb;
            jtj[2] += w * jb * jb;
            jtr[0] += w * jk * r;
            jtr[1] += w * jb * r;
        }
        let det = jtj[0] * jtj[2] - jtj[1] * jtj[1];
        if det.abs() < 1e-300 {
            break;
        }
        let dk = (jtj[2] * jtr[0] - jtj[1] * jtr[1]) / det;
        let db = (jtj[0] * jtr[1] - jtj[1] * jtr[0]) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-4 {
            let (nk, nb) = (k + step * dk, b + step * db);
            let nc = cost(m, nk, nb);
            if nc <= c {
                k = nk;
                b = nb;
                c = nc;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved || (step * dk).abs().max((step * db).abs()) < 1e-10 {
            break;
        }
    }
    (k, b)
}

/// Modelled std at bin `i`.
pub(crate) fn moment_std(m: &MomentBins, i: usize, k: f64, b: f64) -> f64 {
    model_var(m, i, k, b).max(0.0).sqrt()
}

/// Linear-interpolated quantile (`q` in [0, 1]) of unsorted values.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (k, b, r2) = ols(&x, &y).unwrap();
        assert!((k - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(ols(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn r_squared_of_mean_prediction_is_zero() {
        let y = [1.0, 2.0, 4.0];
        let m = 7.0 / 3.0;
        assert!(r_squared(&y, &[m, m, m]).abs() < 1e-12);
        assert!(r_squared(&[2.0, 2.0], &[1.0, 3.0]).is_nan());
    }

    #[test]
    fn bins_cover_range() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b = Bins::new(&x, 10).unwrap();
        assert_eq!(b.counts, vec![10; 10]);
        assert_eq!(b.idx[99], 9);
        let (lo, hi) = b.edges(0);
        assert_eq!(lo, 0.0);
        assert!((hi - 9.9).abs() < 1e-12);
    }

    #[test]
    fn moment_fit_recovers_linear_std() {
        // model std = k g + b when a2 = g², a1 = 2g, a0 = 1
        let g: Vec<f64> = (0..20).map(|i| i as f64 * 3.0).collect();
        let (k, b) = (0.11, 4.76);
        let m = MomentBins {
            target: g.iter().map(|x| (k * x + b).powi(2)).collect(),
            a2: g.iter().map(|x| x * x).collect(),
            a1: g.iter().map(|x| 2.0 * x).collect(),
            a0: vec![1.0; 20],
            weight: vec![1.0; 20],
        };
        let (fk, fb) = fit_moments(&m, 0.05, 1.0);
        assert!((fk - k).abs() < 1e-8 && (fb - b).abs() < 1e-6, "{fk} {fb}");
    }
}
