//! Tukey-lambda distribution: quantile, spread and inverse-transform sampling.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const LOGISTIC_EPS: f64 = 1e-9;
/// Below this |λ| the closed-form variance loses precision to cancellation
/// and is interpolated towards the logistic limit instead.
const VARIANCE_SERIES_EPS: f64 = 1e-4;

/// Quantile of the unscaled Tukey-lambda distribution.
pub fn tukey_quantile(p: f64, lambda: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(quantile_from_logs(p.ln(), (-p).ln_1p(), lambda))
}

/// Quantile from `ln p` and `ln(1 - p)`; stable for small |λ|.
#[inline]
pub(crate) fn quantile_from_logs(lp: f64, lq: f64, lambda: f64) -> f64 {
    if lambda.abs() < LOGISTIC_EPS {
        lp - lq
    } else {
        (libm::expm1(lambda * lp) - libm::expm1(lambda * lq)) / lambda
    }
}

fn variance_closed_form(lambda: f64) -> f64 {
    let ratio = (2.0 * libm::lgamma(lambda + 1.0) - libm::lgamma(2.0 * lambda + 2.0)).exp();
    2.0 / (lambda * lambda) * (1.0 / (2.0 * lambda + 1.0) - ratio)
}

/// Standard deviation of the unscaled distribution with shape `lambda`.
pub fn tukey_unit_std(lambda: f64) -> Result<f64> {
    if !(lambda > -0.5) || !lambda.is_finite() {
        return Err(Error::param(format!(
            "lambda must exceed -0.5 for finite variance, got {lambda}"
        )));
    }
    let logistic = std::f64::consts::PI * std::f64::consts::PI / 3.0;
    let var = if lambda.abs() < LOGISTIC_EPS {
        logistic
    } else if lambda.abs() < VARIANCE_SERIES_EPS {
        let edge = VARIANCE_SERIES_EPS.copysign(lambda);
        let t = lambda / edge;
        logistic + t * (variance_closed_form(edge) - logistic)
    } else {
        variance_closed_form(lambda)
    };
    Ok(var.sqrt())
}

/// Draws unit-variance Tukey-lambda values for a fixed shape.
#[derive(Clone, Copy, Debug)]
pub struct TukeySampler {
    lambda: f64,
    inv_std: f64,
}

impl TukeySampler {
    pub fn new(lambda: f64) -> Result<Self> {
        Ok(Self {
            lambda,
            inv_std: 1.0 / tukey_unit_std(lambda)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Unit-variance value for a uniform draw `u` in (0, 1).
    #[inline]
    pub fn unit_from_uniform(&self, u: f64) -> f64 {
        quantile_from_logs(u.ln(), (-u).ln_1p(), self.lambda) * self.inv_std
    }

    #[inline]
    pub fn sample_unit(&self, rng: &mut SeededRng) -> f64 {
        self.unit_from_uniform(rng.uniform_open())
    }
}

/// `n` samples with standard deviation `sigma` and shape `lambda`.
pub fn sample_tukey(rng: &mut SeededRng, sigma: f64, lambda: f64, n: usize) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::param(format!("sigma must be non-negative, got {sigma}")));
    }
    let s = TukeySampler::new(lambda)?;
    Ok((0..n).map(|_| sigma * s.sample_unit(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        for l in [-0.2, 0.0, 0.27, 1.0] {
            assert!(tukey_quantile(0.5, l).unwrap().abs() < 1e-15);
        }
        let q = tukey_quantile(0.731, 0.0).unwrap();
        assert!((q - (0.731f64 / 0.269).ln()).abs() < 1e-12);
        assert!((q - 0.9994).abs() < 1e-3);
        assert!((tukey_quantile(0.8, 1.0).unwrap() - 0.6).abs() < 1e-12);
        assert!(tukey_quantile(0.0, 0.3).is_err());
        assert!(tukey_quantile(1.0, 0.3).is_err());
    }

    #[test]
    fn quantile_continuous_at_zero() {
        let a = tukey_quantile(0.9, 0.0).unwrap();
        let b = tukey_quantile(0.9, 1e-7).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn unit_std_examples() {
        assert!((tukey_unit_std(1.0).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((tukey_unit_std(0.0).unwrap() - std::f64::consts::PI / 3f64.sqrt()).abs() < 1e-12);
        assert!(tukey_unit_std(-0.5).is_err());
        assert!(tukey_unit_std(-0.7).is_err());
        // continuity across the small-lambda branch
        let c = tukey_unit_std(0.0).unwrap();
        for l in [-2e-4, -5e-5, 5e-5, 9.9e-5, 1.01e-4, 2e-4] {
            let s = tukey_unit_std(l).unwrap();
            assert!((s - c).abs() < 5.0 * l.abs(), "{l}: {s}");
        }
        let below = tukey_unit_std(0.99e-4).unwrap();
        let above = tukey_unit_std(1.01e-4).unwrap();
        assert!((below - above).abs() < 2e-5);
    }

    #[test]
    fn sigma_zero_gives_zeros() {
        let mut rng = SeededRng::new(1);
        assert!(sample_tukey(&mut rng, 0.0, 0.27, 100)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(sample_tukey(&mut rng, -1.0, 0.27, 1).is_err());
    }

    #[test]
    fn fixed_seed_is_repeatable() {
        let a = sample_tukey(&mut SeededRng::new(8), 3.0, 0.1, 50).unwrap();
        let b = sample_tukey(&mut SeededRng::new(8), 3.0, 0.1, 50).unwrap();
        assert_eq!(a, b);
    }
}
