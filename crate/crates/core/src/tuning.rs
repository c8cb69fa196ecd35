//! Optima of the efficiency surfaces.
//!
//! Under Gaussian log-noise the efficiency `tau^2 ell^2 Phi(-sqrt(tau^2 + ell^2)/2)`
//! (`tau^2 = 2 sigma2`) is symmetric in `(ell^2, tau^2)`, so the joint optimum
//! sits on `tau^2 = ell^2` and reduces to maximising `sigma^4 Phi(-sigma)`.
//! The conditional optima solve the first-order condition
//! `Phi(-s/2) = ell^2 phi(s/2) / (4 s)`, `s = sqrt(ell^2 + tau^2)`, which is
//! written through the Mills ratio so it stays finite for very large `s`.

use crate::limit::{
    finite_d_gaussian, gaussian_acceptance, sar_efficiency, sar_efficiency_with_overhead,
};
use crate::numeric::optim::{brent_minimize, brent_root, coordinate_ascent};
use crate::numeric::quadrature::QuadSpec;
use crate::numeric::{log_norm_cdf, mills_ratio, norm_cdf};
use crate::par::{map_slice, Execution};
use crate::{error::invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, SQRT_2};

/// Search bracket for `ell`.
pub const ELL_BRACKET: (f64, f64) = (1e-3, 20.0);
/// Search bracket for `sigma2`.
pub const SIGMA2_BRACKET: (f64, f64) = (1e-3, 50.0);
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub d: Option<usize>,
    pub ell_opt: f64,
    pub sigma2_opt: f64,
    #[serde(rename = "alpha_opt")]
    pub alpha_at_opt: f64,
    #[serde(rename = "eff_opt")]
    pub eff_at_opt: f64,
    pub t_rat: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Joint maximiser of the SAR efficiency.
pub fn optimize_sar_joint(tol: f64) -> Result<OptimumReport> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(invalid(format!("tol must lie in (0, 1e-6], got {tol}")));
    }
    // maximise ln(sigma^4 Phi(-sigma))
    let min = brent_minimize(
        |s| -(4.0 * s.ln() + log_norm_cdf(-s)),
        0.1,
        10.0,
        tol,
        MAX_ITER,
    );
    if !min.converged {
        return Err(Error::NoConvergence {
            iterations: min.iterations,
            best: vec![min.x],
        });
    }
    let sigma = min.x;
    let sigma2 = sigma * sigma;
    let ell = sigma * SQRT_2;
    Ok(OptimumReport {
        d: None,
        ell_opt: ell,
        sigma2_opt: sigma2,
        alpha_at_opt: 2.0 * norm_cdf(-sigma),
        eff_at_opt: sar_efficiency(ell, sigma2),
        t_rat: None,
        iterations: min.iterations,
        converged: true,
    })
}

/// Root in `x` of the stationarity condition with the other squared scale
/// fixed at `other_sq`: `R(s/2) = x^2 / (4 s)`, `s = sqrt(x^2 + other_sq)`.
fn conditional_root(other_sq: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let residual = |x: f64| {
        let s = (x * x + other_sq).sqrt();
        mills_ratio(0.5 * s).ln() - (x * x / (4.0 * s)).ln()
    };
    brent_root(residual, lo, hi, tol, MAX_ITER)
}

/// Optimal `ell` for fixed noise variance `sigma2`.
pub fn optimize_ell_given_sigma2(sigma2: f64, tol: f64) -> Result<f64> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(invalid(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    conditional_root(2.0 * sigma2, ELL_BRACKET.0, ELL_BRACKET.1, tol)
}

/// Optimal `sigma2` for fixed `ell`, from the same condition with the roles
/// of `ell^2` and `tau^2` exchanged.
pub fn optimize_sigma2_given_ell(ell: f64, tol: f64) -> Result<f64> {
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(invalid(format!("ell must be positive, got {ell}")));
    }
    let (lo, hi) = (
        (2.0 * SIGMA2_BRACKET.0).sqrt(),
        (2.0 * SIGMA2_BRACKET.1).sqrt(),
    );
    let tau = conditional_root(ell * ell, lo, hi, tol)?;
    Ok(0.5 * tau * tau)
}

/// Joint optimum of `J(ell) / (1 + t_rat / sigma2)`.
///
/// The overhead factor does not depend on `ell`, so the conditional optimum
/// in `ell` is the overhead-free root; the remaining profile in `ln sigma2`
/// is maximised with Brent's method on `[1e-9, 50]`.
pub fn optimize_with_overhead(t_rat: f64, tol: f64) -> Result<OptimumReport> {
    if !(t_rat >= 0.0 && t_rat.is_finite()) {
        return Err(invalid(format!("t_rat must be >= 0, got {t_rat}")));
    }
    let root_tol = (tol * 1e-2).max(1e-14);
    let mut failure = None;
    let mut profile = |log_s2: f64| -> f64 {
        let s2 = log_s2.exp();
        match optimize_ell_given_sigma2(s2, root_tol) {
            Ok(ell) => {
                let log_j =
                    2.0 * ell.ln() + LN_2 + log_norm_cdf(-0.5 * (ell * ell + 2.0 * s2).sqrt());
                -(log_j - (t_rat / s2).ln_1p())
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    let min = brent_minimize(
        &mut profile,
        1e-9f64.ln(),
        SIGMA2_BRACKET.1.ln(),
        tol,
        MAX_ITER,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if !min.converged {
        return Err(Error::NoConvergence {
            iterations: min.iterations,
            best: vec![min.x.exp()],
        });
    }
    let sigma2 = min.x.exp();
    let ell = optimize_ell_given_sigma2(sigma2, root_tol)?;
    Ok(OptimumReport {
        d: None,
        ell_opt: ell,
        sigma2_opt: sigma2,
        alpha_at_opt: gaussian_acceptance(ell, sigma2),
        eff_at_opt: sar_efficiency_with_overhead(ell, sigma2, t_rat),
        t_rat: Some(t_rat),
        iterations: min.iterations,
        converged: true,
    })
}

/// Maximiser of `sigma2 * ESJD(lambda, d)` for the standard Gaussian target in
/// dimension `d`, reported on the `ell = lambda sqrt(d)` scale.
///
/// Coordinate ascent in `(ell, sigma2)`, started at the asymptotic optimum.
pub fn optimize_finite_d(d: usize, tol: f64) -> Result<OptimumReport> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    let quad = QuadSpec {
        rel_tol: 1e-12,
        ..QuadSpec::default()
    };
    let root_d = (d as f64).sqrt();
    let mut failure: Option<Error> = None;
    let objective = |p: &[f64]| -> f64 {
        match finite_d_gaussian(p[0] / root_d, d, p[1], quad) {
            Ok(r) => (p[1] * r.esjd).ln(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };
    let start = optimize_sar_joint(1e-9)?;
    let (x, _, sweeps) = coordinate_ascent(
        objective,
        &[start.ell_opt, start.sigma2_opt],
        &[ELL_BRACKET, SIGMA2_BRACKET],
        tol.max(1e-7),
        MAX_ITER,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (ell, sigma2) = (x[0], x[1]);
    let at = finite_d_gaussian(ell / root_d, d, sigma2, quad)?;
    Ok(OptimumReport {
        d: Some(d),
        ell_opt: ell,
        sigma2_opt: sigma2,
        alpha_at_opt: at.acceptance,
        eff_at_opt: sigma2 * at.esjd,
        t_rat: None,
        iterations: sweeps,
        converged: true,
    })
}

/// [`optimize_finite_d`] over several dimensions, in input order.
pub fn optimize_finite_d_many(
    dims: &[usize],
    tol: f64,
    exec: Execution,
) -> Result<Vec<OptimumReport>> {
    map_slice(exec, dims, |&d| optimize_finite_d(d, tol))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_rel(f: impl Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
        let h = 1e-5;
        let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        (gx * gx + gy * gy).sqrt() / f(x, y).abs()
    }

    #[test]
    fn sar_joint_optimum() {
        let r = optimize_sar_joint(1e-9).unwrap();
        assert!((r.sigma2_opt - 3.283).abs() < 5e-4);
        assert!((r.ell_opt - 2.562).abs() < 5e-4);
        assert!((r.alpha_at_opt - 0.07001).abs() < 5e-6);
        assert!((r.ell_opt.powi(2) - 2.0 * r.sigma2_opt).abs() < 1e-12);
        assert!(grad_rel(sar_efficiency, r.ell_opt, r.sigma2_opt) < 1e-4);
    }

    #[test]
    fn sar_joint_is_stable_in_tolerance() {
        let a = optimize_sar_joint(1e-9).unwrap();
        let b = optimize_sar_joint(1e-7).unwrap();
        assert!((a.sigma2_opt - b.sigma2_opt).abs() < 1e-4);
        assert!((a.ell_opt - b.ell_opt).abs() < 1e-4);
        assert!((a.alpha_at_opt - b.alpha_at_opt).abs() < 1e-4);
        assert!(optimize_sar_joint(1e-3).is_err());
    }

    #[test]
    fn sar_joint_agrees_with_a_two_dimensional_grid_search() {
        // independent oracle: coarse grid over (ell, sigma2) then Nelder-free polish
        let mut best = (0.0, 0.0, f64::MIN);
        for i in 0..=590 {
            for j in 0..=590 {
                let (l, s) = (0.1 + i as f64 * 0.01, 0.1 + j as f64 * 0.01);
                let v = sar_efficiency(l, s);
                if v > best.2 {
                    best = (l, s, v);
                }
            }
        }
        let (mut l, mut s) = (best.0, best.1);
        for _ in 0..60 {
            l = brent_minimize(|x| -sar_efficiency(x, s), l - 0.02, l + 0.02, 1e-12, 200).x;
            s = brent_minimize(|y| -sar_efficiency(l, y), s - 0.02, s + 0.02, 1e-12, 200).x;
        }
        let r = optimize_sar_joint(1e-9).unwrap();
        assert!((l - r.ell_opt).abs() < 1e-3 && (s - r.sigma2_opt).abs() < 1e-3);
    }

    #[test]
    fn conditional_optima() {
        let l0 = optimize_ell_given_sigma2(0.0, 1e-12).unwrap();
        assert!((l0 - 2.38).abs() < 0.01);
        assert!((gaussian_acceptance(l0, 0.0) - 0.234).abs() < 1e-3);
        let big = optimize_ell_given_sigma2(1e4, 1e-12).unwrap();
        assert!((big / (2.0 * SQRT_2) - 1.0).abs() < 0.01);
        let mid = optimize_ell_given_sigma2(3.283, 1e-12).unwrap();
        assert!((mid - 2.562).abs() < 1e-3);

        assert!((optimize_sigma2_given_ell(1e3, 1e-12).unwrap() / 4.0 - 1.0).abs() < 0.01);
        assert!((optimize_sigma2_given_ell(1e-3, 1e-12).unwrap() / 2.83 - 1.0).abs() < 0.01);
        assert!((optimize_sigma2_given_ell(2.562, 1e-12).unwrap() - 3.283).abs() < 1e-3);
    }

    #[test]
    fn conditional_optimum_matches_direct_maximisation() {
        for s2 in [0.25, 1.0, 4.0, 9.0] {
            let root = optimize_ell_given_sigma2(s2, 1e-12).unwrap();
            let direct = brent_minimize(|l| -sar_efficiency(l, s2), 0.5, 6.0, 1e-10, 300).x;
            assert!((root - direct).abs() < 1e-6, "{s2}: {root} vs {direct}");
        }
    }

    #[test]
    fn conditional_insensitivity_ranges() {
        for i in 0..=35 {
            let s2 = 0.25 + i as f64 * 0.25;
            let l = optimize_ell_given_sigma2(s2, 1e-10).unwrap();
            assert!((2.38..=2.83).contains(&l), "sigma2 {s2}: ell {l}");
        }
        for i in 0..=55 {
            let ell = 0.5 + i as f64 * 0.1;
            let s2 = optimize_sigma2_given_ell(ell, 1e-10).unwrap();
            assert!((2.83..=4.0).contains(&s2), "ell {ell}: sigma2 {s2}");
        }
    }

    #[test]
    fn conditional_optima_are_symmetric() {
        for ell in [0.7, 1.5, 3.0, 5.0] {
            // tau^2 = ell^2 <=> sigma2 = ell^2 / 2
            let swapped = optimize_ell_given_sigma2(ell * ell / 2.0, 1e-12).unwrap();
            let s2 = optimize_sigma2_given_ell(ell, 1e-12).unwrap();
            assert!((swapped.powi(2) - 2.0 * s2).abs() < 1e-9);
        }
    }

    #[test]
    fn overhead_interpolates_between_the_limits() {
        let hi = optimize_with_overhead(1e6, 1e-9).unwrap();
        let lo = optimize_with_overhead(1e-6, 1e-9).unwrap();
        let one = optimize_with_overhead(1.0, 1e-9).unwrap();
        assert!((hi.alpha_at_opt - 0.070).abs() < 1e-3, "{hi:?}");
        assert!((lo.alpha_at_opt - 0.234).abs() < 1e-3, "{lo:?}");
        assert!(one.alpha_at_opt > 0.070 && one.alpha_at_opt < 0.234);
        let mut prev = 1.0;
        for t in [1e-4, 1e-2, 1.0, 1e2, 1e4] {
            let a = optimize_with_overhead(t, 1e-9).unwrap().alpha_at_opt;
            assert!(a <= prev + 1e-9);
            prev = a;
        }
    }

    #[test]
    fn finite_d_first_dimension() {
        let r = optimize_finite_d(1, 1e-6).unwrap();
        assert!((r.ell_opt - 2.59).abs() < 0.02, "{r:?}");
        assert!((r.alpha_at_opt - 0.115).abs() < 0.005);
        assert!((r.sigma2_opt - 3.23).abs() < 0.05);
    }
}
