//! Diagnostics for the log-likelihood noise of a pseudo-marginal estimator.
//!
//! Everything here is a deterministic function of the supplied draws, except
//! [`collect_noise_sample`] which generates them and [`m2_bootstrap_bands`]
//! which takes an explicit rng.

use crate::numeric::norm_quantile;
use crate::numeric::stats::{ks_critical, ks_distance_normal, log_mean_exp, mean, ols, variance};
use crate::par::{map_indexed, Execution};
use crate::rng;
use crate::sampler::LogTargetEstimator;
use crate::{error::invalid, Error, Result};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub const MIN_NOISE_DRAWS: usize = 100;

/// Draws of the proposal noise `W*` at a fixed point, recentred so that the
/// sample mean of `exp(w*)` is exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub w_star_draws: Vec<f64>,
    /// Number of particles (or other precision label) behind the estimator.
    pub m: usize,
    pub anchor: Vec<f64>,
    /// Constant subtracted from the raw log-estimates.
    pub offset: f64,
}

/// Subtracts `log_mean_exp(draws)`; returns the amount subtracted.
pub fn recentre(draws: &mut [f64]) -> f64 {
    let c = log_mean_exp(draws);
    for d in draws.iter_mut() {
        *d -= c;
    }
    c
}

impl NoiseSample {
    pub fn from_log_estimates(mut draws: Vec<f64>, m: usize, anchor: Vec<f64>) -> Result<Self> {
        if draws.len() < MIN_NOISE_DRAWS {
            return Err(invalid(format!(
                "need at least {MIN_NOISE_DRAWS} draws, got {}",
                draws.len()
            )));
        }
        if let Some(bad) = draws.iter().find(|d| !d.is_finite()) {
            return Err(Error::Estimator(format!("non-finite log-estimate {bad}")));
        }
        let offset = recentre(&mut draws);
        Ok(Self {
            w_star_draws: draws,
            m,
            anchor,
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.w_star_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_star_draws.is_empty()
    }

    pub fn variance(&self) -> f64 {
        variance(&self.w_star_draws)
    }

    /// Single-column CSV with header `w_star`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["w_star"])?;
        for d in &self.w_star_draws {
            w.write_record([d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` independent evaluations of `estimator` at `anchor`. With the exact
/// log-target supplied the draws are `W*` itself before recentring; the
/// recentring then only absorbs Monte Carlo error in `E[exp W*] = 1`.
pub fn collect_noise_sample<E: LogTargetEstimator + Sync>(
    estimator: &E,
    anchor: &[f64],
    exact_log_target: Option<f64>,
    n: usize,
    m: usize,
    exec: Execution,
    rng: &mut dyn RngCore,
) -> Result<NoiseSample> {
    if n < MIN_NOISE_DRAWS {
        return Err(invalid(format!(
            "need at least {MIN_NOISE_DRAWS} draws, got {n}"
        )));
    }
    if anchor.len() != estimator.dim() {
        return Err(Error::Dimension {
            expected: estimator.dim(),
            got: anchor.len(),
        });
    }
    let base = rng.next_u64();
    let exact = exact_log_target.unwrap_or(0.0);
    let draws = map_indexed(exec, n, |i| {
        estimator
            .estimate(anchor, &mut rng::stream(base, i as u64))
            .log_estimate
            - exact
    });
    let mut sample = NoiseSample::from_log_estimates(draws, m, anchor.to_vec())?;
    sample.offset += exact;
    Ok(sample)
}

/// OLS of log sample variance on log `m`, returned as `(slope, intercept)`.
pub fn variance_vs_m_slope(samples: &[NoiseSample]) -> Result<(f64, f64)> {
    let mut ms: Vec<usize> = samples.iter().map(|s| s.m).collect();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() < 3 {
        return Err(invalid(format!(
            "need at least 3 distinct m values, got {}",
            ms.len()
        )));
    }
    let x: Vec<f64> = samples.iter().map(|s| (s.m as f64).ln()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.variance().ln()).collect();
    Ok(ols(&x, &y))
}

pub fn default_t_grid() -> Vec<f64> {
    crate::limit::linspace(-1.0, 1.0, 21)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgfCurves {
    pub t_grid: Vec<f64>,
    /// Empirical MGF of the shifted log-estimates.
    pub m1: Vec<f64>,
    /// `m1` divided by the empirical mean of `exp((t + 1) W*)`.
    pub m2: Vec<f64>,
    pub shift: f64,
}

impl MgfCurves {
    /// CSV with header `t,m1,m2`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "m1", "m2"])?;
        for i in 0..self.t_grid.len() {
            w.write_record([self.t_grid[i], self.m1[i], self.m2[i]].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn scaled_log_mean_exp(xs: &[f64], t: f64, shift: f64) -> f64 {
    let scaled: Vec<f64> = xs.iter().map(|x| t * (x + shift)).collect();
    log_mean_exp(&scaled)
}

/// `M1(t)` from log-target estimates sampled along a chain and `M2(t)`, which
/// divides out the noise contribution using the stationary-noise identity.
pub fn mgf_curves(
    l_hat: &[f64],
    noise: &NoiseSample,
    t_grid: &[f64],
    shift: f64,
) -> Result<MgfCurves> {
    if l_hat.is_empty() {
        return Err(Error::Empty("l_hat draws"));
    }
    if noise.is_empty() {
        return Err(Error::Empty("noise draws"));
    }
    let mut m1 = Vec::with_capacity(t_grid.len());
    let mut m2 = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let log_m1 = scaled_log_mean_exp(l_hat, t, shift);
        let log_w = scaled_log_mean_exp(&noise.w_star_draws, t + 1.0, 0.0);
        let (a, b) = (log_m1.exp(), (log_m1 - log_w).exp());
        if !a.is_finite() || !b.is_finite() || a == 0.0 || b == 0.0 {
            return Err(Error::MgfOverflow(t));
        }
        m1.push(a);
        m2.push(b);
    }
    Ok(MgfCurves {
        t_grid: t_grid.to_vec(),
        m1,
        m2,
        shift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgfBands {
    pub t_grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub std_error: Vec<f64>,
}

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

/// Percentile bootstrap bands for `M2`, resampling `l_hat` and the noise
/// draws independently.
pub fn m2_bootstrap_bands(
    l_hat: &[f64],
    noise: &NoiseSample,
    t_grid: &[f64],
    shift: f64,
    resamples: usize,
    level: f64,
    rng: &mut dyn RngCore,
) -> Result<MgfBands> {
    if resamples < 2 {
        return Err(invalid("need at least 2 bootstrap resamples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!(
            "band level must be in (0, 1), got {level}"
        )));
    }
    let nw = noise.len();
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let l: Vec<f64> = (0..l_hat.len())
            .map(|_| l_hat[rng.random_range(0..l_hat.len())])
            .collect();
        let w: Vec<f64> = (0..nw)
            .map(|_| noise.w_star_draws[rng.random_range(0..nw)])
            .collect();
        let ns = NoiseSample {
            w_star_draws: w,
            ..noise.clone()
        };
        curves.push(mgf_curves(&l, &ns, t_grid, shift)?.m2);
    }
    let lo_q = (1.0 - level) / 2.0;
    let mut out = MgfBands {
        t_grid: t_grid.to_vec(),
        lower: Vec::new(),
        upper: Vec::new(),
        std_error: Vec::new(),
    };
    for k in 0..t_grid.len() {
        let mut col: Vec<f64> = curves.iter().map(|c| c[k]).collect();
        out.std_error.push(variance(&col).sqrt());
        col.sort_by(|a, b| a.total_cmp(b));
        let at = |q: f64| col[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
        out.lower.push(at(lo_q));
        out.upper.push(at(1.0 - lo_q));
    }
    Ok(out)
}

/// Standardised order statistics against standard normal quantiles at
/// plotting positions `(i - 0.5) / n`.
pub fn qq_against_gaussian(sample: &NoiseSample) -> Vec<(f64, f64)> {
    let xs = &sample.w_star_draws;
    let n = xs.len();
    let (mu, sd) = (mean(xs), variance(xs).sqrt());
    let mut z: Vec<f64> = xs.iter().map(|x| (x - mu) / sd).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    z.into_iter()
        .enumerate()
        .map(|(i, e)| (norm_quantile((i as f64 + 0.5) / n as f64), e))
        .collect()
}

/// CSV with header `q_theory,q_emp`.
pub fn write_qq_csv(pairs: &[(f64, f64)], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q_theory", "q_emp"])?;
    for (a, b) in pairs {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub distance: f64,
    pub critical: f64,
    pub passes: bool,
}

/// Kolmogorov-Smirnov distance of the standardised draws from N(0, 1).
pub fn ks_against_gaussian(sample: &NoiseSample, level: f64) -> KsResult {
    let xs = &sample.w_star_draws;
    let distance = ks_distance_normal(xs, mean(xs), variance(xs));
    let critical = ks_critical(xs.len(), level);
    KsResult {
        distance,
        critical,
        passes: distance < critical,
    }
}
