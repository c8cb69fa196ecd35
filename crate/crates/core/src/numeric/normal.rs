//! Standard normal density, distribution and quantile functions.
//!
//! `norm_cdf` is built on the complementary error function, which keeps full
//! relative precision in the lower tail. `log_norm_cdf` switches to the Mills
//! ratio continued fraction below `-8`, so `log Phi(-x)` stays finite far past
//! the point where `Phi(-x)` itself underflows.

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_SWITCH: f64 = 8.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio `R(x) = Phi(-x) / phi(x)`.
pub fn mills_ratio(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        return norm_cdf(-x) / norm_pdf(x);
    }
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...)))), modified Lentz.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `ln Phi(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -TAIL_SWITCH {
        norm_cdf(x).ln()
    } else {
        norm_log_pdf(x) + mills_ratio(-x).ln()
    }
}

/// Inverse of `norm_cdf` on (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((norm_cdf(-1.19) - 0.117_023_196_023_108_73).abs() < 1e-14);
        // Phi(-10) = 7.619853024160527e-24
        assert!((norm_cdf(-10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_cdf_is_continuous_across_the_tail_switch() {
        let below = log_norm_cdf(-TAIL_SWITCH - 1e-9);
        let above = log_norm_cdf(-TAIL_SWITCH + 1e-9);
        assert!((below - above).abs() < 1e-7);
        // direct evaluation still valid at -20
        let direct = norm_cdf(-20.0).ln();
        assert!((log_norm_cdf(-20.0) - direct).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn log_cdf_survives_deep_tail() {
        let v = log_norm_cdf(-70.0);
        assert!(v.is_finite());
        // leading asymptotics: -x^2/2 - ln x - ln sqrt(2 pi)
        let lead = -2450.0 - 70f64.ln() - LN_SQRT_2PI;
        assert!((v - lead).abs() < 1e-3);
    }

    #[test]
    fn mills_ratio_large_argument() {
        let x = 500.0;
        let r = mills_ratio(x);
        let series = (1.0 - 1.0 / (x * x) + 3.0 / x.powi(4)) / x;
        assert!((r / series - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
    }
}
