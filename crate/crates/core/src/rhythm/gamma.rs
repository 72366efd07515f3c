//! Two-parameter gamma duration model: maximum-likelihood fit, CDF and PPF.

use serde::{Deserialize, Serialize};

use super::special::{digamma, ln_gamma, regularized_lower_gamma, trigamma};
use crate::error::{Error, Result};

const NEWTON_TOLERANCE: f64 = 1e-10;
const MAX_NEWTON_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
    #[serde(rename = "n")]
    pub n_samples: usize,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64, n_samples: usize) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!(
                "gamma shape and scale must be positive, got ({shape}, {scale})"
            )));
        }
        Ok(GammaParams {
            shape,
            scale,
            n_samples,
        })
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let y = x / self.scale;
        standard_pdf(self.shape, y) / self.scale
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        gamma_cdf(self, x)
    }

    pub fn ppf(&self, u: f64) -> Result<f64> {
        gamma_ppf(self, u)
    }
}

fn standard_pdf(shape: f64, y: f64) -> f64 {
    if y == 0.0 {
        return match shape.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 1.0,
            _ => 0.0,
        };
    }
    ((shape - 1.0) * y.ln() - y - ln_gamma(shape)).exp()
}

/// Maximum-likelihood gamma fit with location fixed at zero.
///
/// The shape solves `ln k − ψ(k) = ln(mean) − mean(ln x)`, starting from the
/// usual closed-form approximation and refined by Newton steps; the scale is
/// then `mean / shape`.
pub fn fit_gamma(durations: &[f64]) -> Result<GammaParams> {
    if durations.len() < 2 {
        return Err(Error::GammaFit(format!(
            "need at least 2 durations, got {}",
            durations.len()
        )));
    }
    if let Some(bad) = durations.iter().find(|&&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::GammaFit(format!("non-positive duration {bad}")));
    }
    if durations.iter().all(|&d| d == durations[0]) {
        return Err(Error::GammaFit("durations have zero variance".into()));
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let mean_log = durations.iter().map(|d| d.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if s.is_nan() || s <= 0.0 {
        return Err(Error::GammaFit(format!(
            "log-mean gap {s} is not positive; durations are numerically constant"
        )));
    }

    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..MAX_NEWTON_STEPS {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if next <= 0.0 {
            next = k / 2.0;
        }
        let step = (next - k).abs();
        k = next;
        if step < NEWTON_TOLERANCE {
            break;
        }
    }
    GammaParams::new(k, mean / k, durations.len())
}

pub fn gamma_cdf(p: &GammaParams, x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!("gamma CDF needs x ≥ 0, got {x}")));
    }
    Ok(regularized_lower_gamma(p.shape, x / p.scale))
}

/// Inverse CDF on `(0, 1)` by safeguarded Newton iteration in a bracket.
pub fn gamma_ppf(p: &GammaParams, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("gamma PPF needs u in (0, 1), got {u}")));
    }
    let a = p.shape;
    let cdf = |y: f64| regularized_lower_gamma(a, y);

    // Bracket [lo, hi] with P(lo) < u ≤ P(hi), lo > 0.
    let mut hi = a.max(1.0);
    while cdf(hi) < u {
        hi *= 2.0;
    }
    // Near zero P(a, y) ≈ y^a / Γ(a + 1).
    let mut lo = ((u.ln() + ln_gamma(a + 1.0)) / a).exp().min(hi) * 0.5;
    while cdf(lo) >= u {
        hi = lo;
        lo /= 16.0;
        if lo == 0.0 {
            return Ok(0.0);
        }
    }
    let mut y = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
    for _ in 0..400 {
        let err = cdf(y) - u;
        if err.abs() <= 1e-15 {
            break;
        }
        if err < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
        let density = standard_pdf(a, y);
        let newton = y - err / density;
        y = if density.is_finite() && density > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(y * p.scale)
}
