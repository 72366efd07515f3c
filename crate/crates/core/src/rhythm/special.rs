//! Special functions backing the gamma duration model. Trigamma is not
//! provided by `statrs`, so it is computed here.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma ψ'(x) for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

/// Regularized lower incomplete gamma P(a, x) for `a > 0`, `x ≥ 0`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    statrs::function::gamma::checked_gamma_lr(a, x).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        // Γ(7.5) = 6.5·5.5·…·0.5·√π
        let g75: f64 = [6.5, 5.5, 4.5, 3.5, 2.5, 1.5, 0.5].iter().product::<f64>() * PI.sqrt();
        assert!((ln_gamma(7.5) - g75.ln()).abs() < 1e-13);
        assert!((ln_gamma(11.0) - 3_628_800f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-13);
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-13);
        // ψ(x+1) = ψ(x) + 1/x
        for x in [0.3, 1.7, 4.2, 25.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12);
        }
    }

    #[test]
    fn trigamma_known_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        // Central difference of digamma.
        for x in [0.8, 3.0, 12.5] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn incomplete_gamma_closed_forms() {
        // a = 1: 1 − e^{−x}
        for x in [0.01, 0.5, 1.0, 2.0, 7.0, 30.0] {
            assert!((regularized_lower_gamma(1.0, x) - (1.0 - (-x).exp())).abs() < 1e-14);
        }
        // a = 2: 1 − (1 + x)e^{−x}
        for x in [0.1f64, 1.0, 3.0, 9.0] {
            let exact = 1.0 - (1.0 + x) * (-x).exp();
            assert!((regularized_lower_gamma(2.0, x) - exact).abs() < 1e-14);
        }
        assert_eq!(regularized_lower_gamma(3.0, 0.0), 0.0);
        assert_eq!(regularized_lower_gamma(3.0, f64::INFINITY), 1.0);
    }
}
