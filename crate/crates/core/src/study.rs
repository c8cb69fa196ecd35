//! The (m, gamma) simulation study on the Lotka-Volterra posterior.
//!
//! Each cell runs the particle-marginal sampler with proposal covariance
//! `gamma^2 (2.56^2 / d) V`, where `V` is a posterior covariance estimate from
//! [`pilot_run`] or supplied in the config. Runs with `gamma = 0` reduce to
//! repeated likelihood estimates at the anchor and are collected directly as
//! [`NoiseSample`]s.

use crate::diagnostics::{
    collect_noise_sample, ks_against_gaussian, variance_vs_m_slope, NoiseSample,
};
use crate::filter::{
    lv_posterior, lv_synthesize_data, LotkaVolterra, LvDataset, LvParams, ParticleFilterConfig,
    Resampling, DEFAULT_MAX_EVENTS,
};
use crate::limit::gaussian_acceptance;
use crate::noise::NoiseModel;
use crate::numeric::quadrature::QuadSpec;
use crate::numeric::stats::skewness;
use crate::par::{map_slice, Execution};
use crate::rng::{mix, stream};
use crate::sampler::{gaussian_target, run_chain, ProposalSpec, RunConfig, RunStatistics, Trace};
use crate::{error::invalid, Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Scale of the proposal relative to the posterior covariance at `gamma = 1`.
pub const BASE_SCALE: f64 = 2.56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub t_max: f64,
    pub dt: f64,
    pub u0: [u64; 2],
    pub true_params: LvParams,
    pub ms: Vec<usize>,
    pub gammas: Vec<f64>,
    pub n_iters: usize,
    /// Per-m overrides of `n_iters`, as `(m, n_iters)` pairs.
    pub n_iters_overrides: Vec<(usize, usize)>,
    pub thin: usize,
    /// Number of likelihood estimates at the anchor per m.
    pub noise_draws: usize,
    /// Posterior covariance of the log-parameters.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Anchor and starting point in log-parameter space; defaults to the
    /// log of `true_params`.
    pub anchor: Option<Vec<f64>>,
    pub resampling: Resampling,
    pub max_events: usize,
    /// Seed of the synthetic dataset, kept apart from the run seed so that
    /// pilot, study and noise runs see the same data.
    pub data_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            dt: 1.0,
            u0: [70, 70],
            true_params: LvParams::reference(),
            ms: vec![20, 50, 100],
            gammas: vec![0.6, 1.0, 1.4],
            n_iters: 20_000,
            n_iters_overrides: Vec::new(),
            thin: 10,
            noise_draws: 1_000,
            covariance: None,
            anchor: None,
            resampling: Resampling::Systematic,
            max_events: DEFAULT_MAX_EVENTS,
            data_seed: 0,
        }
    }
}

impl StudyConfig {
    /// Grid and run lengths of the full-size study.
    pub fn full_scale() -> Self {
        Self {
            t_max: 50.0,
            ms: vec![50, 80, 100, 150, 200, 300, 400],
            gammas: (2..=8).map(|k| 0.2 * k as f64).collect(),
            n_iters: 250_000,
            n_iters_overrides: vec![(50, 1_000_000), (80, 1_000_000)],
            noise_draws: 250_000,
            ..Self::default()
        }
    }

    pub fn iterations_for(&self, m: usize) -> usize {
        self.n_iters_overrides
            .iter()
            .find(|(mm, _)| *mm == m)
            .map_or(self.n_iters, |(_, n)| *n)
    }

    pub fn anchor(&self) -> Vec<f64> {
        self.anchor
            .clone()
            .unwrap_or_else(|| self.true_params.to_log().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ms.is_empty() || self.ms.contains(&0) {
            return Err(invalid("ms must be non-empty and positive"));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(invalid(
                "gammas must be positive; gamma = 0 runs are the noise samples",
            ));
        }
        if self.n_iters == 0 || self.thin == 0 {
            return Err(invalid("n_iters and thin must be >= 1"));
        }
        if self.anchor().len() != 5 {
            return Err(Error::Dimension {
                expected: 5,
                got: self.anchor().len(),
            });
        }
        if let Some(c) = &self.covariance {
            if c.len() != 5 || c.iter().any(|r| r.len() != 5) {
                return Err(invalid("covariance must be 5 x 5"));
            }
        }
        LvParams::new(self.true_params.x)?;
        Ok(())
    }

    pub fn dataset(&self) -> Result<LvDataset> {
        let mut ds = lv_synthesize_data(
            &self.true_params,
            self.u0,
            self.t_max,
            self.dt,
            &mut stream(self.data_seed, 0),
        )?;
        ds.model.max_events = self.max_events;
        Ok(ds)
    }

    fn filter_config(&self, m: usize) -> ParticleFilterConfig {
        ParticleFilterConfig::new(m).resampling(self.resampling)
    }

    /// Returns the covariance, or the identity and a warning when none is set.
    fn covariance_matrix(&self, warnings: &mut Vec<String>) -> DMatrix<f64> {
        match &self.covariance {
            Some(rows) => DMatrix::from_fn(5, 5, |i, j| rows[i][j]),
            None => {
                warnings.push("no posterior covariance supplied; using the identity".into());
                DMatrix::identity(5, 5)
            }
        }
    }
}

pub fn proposal_scale(gamma: f64, d: usize) -> f64 {
    gamma * BASE_SCALE / (d as f64).sqrt()
}

/// `2 Phi(-sqrt(2 s2 + gamma^2 2.56^2) / 2)`.
pub fn predicted_acceptance(sigma2: f64, gamma: f64) -> f64 {
    gaussian_acceptance(gamma * BASE_SCALE, sigma2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub m: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub n_iters: usize,
    pub acceptance: f64,
    pub acceptance_se: f64,
    pub esjd: f64,
    pub min_ess: f64,
    pub total_cost: f64,
    pub ess_per_cost: f64,
    pub ess_per_second: f64,
    pub seconds: f64,
    /// Acceptance predicted from the noise variance at this m.
    pub predicted_acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub m: usize,
    pub n: usize,
    pub variance: f64,
    pub skewness: f64,
    pub ks_distance: f64,
    pub ks_critical: f64,
}

impl NoiseReport {
    pub fn from_sample(s: &NoiseSample) -> Self {
        let ks = ks_against_gaussian(s, 0.01);
        Self {
            m: s.m,
            n: s.len(),
            variance: s.variance(),
            skewness: skewness(&s.w_star_draws),
            ks_distance: ks.distance,
            ks_critical: ks.critical,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub seed: u64,
    pub config: StudyConfig,
    pub warnings: Vec<String>,
    pub n_observations: usize,
    pub noise: Vec<NoiseReport>,
    /// OLS of log noise variance on log m; absent with fewer than 3 m values.
    pub variance_slope: Option<(f64, f64)>,
    pub cells: Vec<CellReport>,
    /// Index into `cells` of the largest ESS per unit cost.
    pub best_cell: Option<usize>,
    #[serde(skip)]
    pub noise_samples: Vec<NoiseSample>,
    /// Thinned trace of each cell, in `cells` order.
    #[serde(skip)]
    pub traces: Vec<Trace>,
}

/// Likelihood-estimate noise at the anchor for each m.
pub fn noise_samples(config: &StudyConfig, seed: u64, exec: Execution) -> Result<Vec<NoiseSample>> {
    config.validate()?;
    let ds = config.dataset()?;
    let anchor = config.anchor();
    let ms: Vec<(usize, usize)> = config.ms.iter().copied().enumerate().collect();
    map_slice(exec, &ms, |&(k, m)| {
        let post = lv_posterior(&ds.model, &ds.data, config.filter_config(m));
        let mut rng = stream(mix(seed, 1), k as u64);
        collect_noise_sample(
            &post,
            &anchor,
            None,
            config.noise_draws,
            m,
            Execution::Sequential,
            &mut rng,
        )
    })
    .into_iter()
    .collect()
}

fn run_cell(
    config: &StudyConfig,
    model: &LotkaVolterra,
    ds: &LvDataset,
    cov: &DMatrix<f64>,
    m: usize,
    gamma: f64,
    rng_key: (u64, u64),
) -> Result<(RunStatistics, f64)> {
    let post = lv_posterior(model, &ds.data, config.filter_config(m));
    let lambda = proposal_scale(gamma, 5);
    let proposal = ProposalSpec::with_covariance(lambda, cov.clone())?;
    let run = RunConfig::new(config.iterations_for(m)).recorded(config.thin);
    let start = Instant::now();
    let stats = run_chain(
        &config.anchor(),
        &post,
        &proposal,
        &run,
        &mut stream(rng_key.0, rng_key.1),
    )?;
    Ok((stats, start.elapsed().as_secs_f64()))
}

/// Runs every (m, gamma) cell plus the noise samples. Cells run on the rayon
/// pool when `exec` is parallel; each owns a seed substream, so the report
/// does not depend on the execution mode apart from timings.
pub fn run_study(config: &StudyConfig, seed: u64, exec: Execution) -> Result<StudyReport> {
    config.validate()?;
    let mut warnings = Vec::new();
    let cov = config.covariance_matrix(&mut warnings);
    let ds = config.dataset()?;
    let samples = noise_samples(config, seed, exec)?;
    let noise: Vec<NoiseReport> = samples.iter().map(NoiseReport::from_sample).collect();
    let variance_slope = variance_vs_m_slope(&samples).ok();

    let grid: Vec<(usize, usize, f64)> = config
        .ms
        .iter()
        .enumerate()
        .flat_map(|(k, &m)| config.gammas.iter().map(move |&g| (k, m, g)))
        .collect();
    let results = map_slice(exec, &grid, |&(k, m, g)| {
        let idx = grid_index(&grid, k, g);
        run_cell(config, &ds.model, &ds, &cov, m, g, (mix(seed, 2), idx))
    });
    let mut cells = Vec::with_capacity(grid.len());
    let mut traces = Vec::with_capacity(grid.len());
    for ((k, m, gamma), res) in grid.iter().zip(results) {
        let (mut stats, seconds) = res?;
        traces.push(stats.trace.take().unwrap_or_default());
        let min_ess = stats.min_ess().unwrap_or(f64::NAN);
        cells.push(CellReport {
            m: *m,
            gamma: *gamma,
            lambda: proposal_scale(*gamma, 5),
            n_iters: stats.n_iters,
            acceptance: stats.acceptance_rate,
            acceptance_se: stats.acceptance_se,
            esjd: stats.esjd,
            min_ess,
            total_cost: stats.total_cost,
            ess_per_cost: min_ess / stats.total_cost,
            ess_per_second: min_ess / seconds,
            seconds,
            predicted_acceptance: predicted_acceptance(noise[*k].variance, *gamma),
        });
    }
    let best_cell = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ess_per_cost.is_finite())
        .max_by(|a, b| a.1.ess_per_cost.total_cmp(&b.1.ess_per_cost))
        .map(|(i, _)| i);
    Ok(StudyReport {
        seed,
        config: config.clone(),
        warnings,
        n_observations: ds.data.len(),
        noise,
        variance_slope,
        cells,
        best_cell,
        noise_samples: samples,
        traces,
    })
}

fn grid_index(grid: &[(usize, usize, f64)], k: usize, g: f64) -> u64 {
    grid.iter()
        .position(|&(kk, _, gg)| kk == k && gg == g)
        .unwrap() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub m: usize,
    pub n_iters: usize,
    /// Isotropic random-walk scale in log-parameter space.
    pub step: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            m: 100,
            n_iters: 5_000,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotResult {
    pub acceptance: f64,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl PilotResult {
    /// Copies the covariance and median into a study config.
    pub fn apply(&self, config: &mut StudyConfig) {
        config.covariance = Some(self.covariance.clone());
        config.anchor = Some(self.median.clone());
    }
}

/// Short isotropic run from the anchor whose second half provides the
/// posterior mean, median and covariance estimates.
pub fn pilot_run(config: &StudyConfig, pilot: &PilotConfig, seed: u64) -> Result<PilotResult> {
    config.validate()?;
    if pilot.n_iters < 20 {
        return Err(invalid("pilot needs at least 20 iterations"));
    }
    let ds = config.dataset()?;
    let post = lv_posterior(&ds.model, &ds.data, config.filter_config(pilot.m));
    let proposal = ProposalSpec::isotropic(pilot.step, 5)?;
    let run = RunConfig::new(pilot.n_iters).recorded(1);
    let stats = run_chain(
        &config.anchor(),
        &post,
        &proposal,
        &run,
        &mut stream(mix(seed, 3), 0),
    )?;
    let rows = &stats.trace.as_ref().expect("recorded run").rows;
    let kept: Vec<&Vec<f64>> = rows[rows.len() / 2..].iter().map(|r| &r.position).collect();
    let n = kept.len() as f64;
    let mean: Vec<f64> = (0..5)
        .map(|j| kept.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let covariance = (0..5)
        .map(|i| {
            (0..5)
                .map(|j| {
                    kept.iter()
                        .map(|p| (p[i] - mean[i]) * (p[j] - mean[j]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect();
    let median = (0..5)
        .map(|j| {
            let mut col: Vec<f64> = kept.iter().map(|p| p[j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            col[col.len() / 2]
        })
        .collect();
    Ok(PilotResult {
        acceptance: stats.acceptance_rate,
        mean,
        median,
        covariance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateCheck {
    pub dim: usize,
    pub gamma: f64,
    pub sigma2: f64,
    /// Variance of the noise sample at the anchor.
    pub sigma2_hat: f64,
    pub acceptance: f64,
    pub acceptance_se: f64,
    /// `2 Phi(-sqrt(2 sigma2_hat + gamma^2 2.56^2) / 2)`.
    pub predicted: f64,
    /// Exact acceptance of the same chain in dimension `dim`.
    pub finite_d: f64,
    pub z_score: f64,
}

/// Runs the sampler on a standard Gaussian target of dimension `dim` with
/// Gaussian log-noise of variance `sigma2`, identity covariance and scale
/// `gamma 2.56 / sqrt(dim)`, and compares its acceptance rate with the
/// asymptotic prediction.
pub fn gaussian_surrogate_check(
    dim: usize,
    sigma2: f64,
    gamma: f64,
    n_iters: usize,
    noise_draws: usize,
    seed: u64,
) -> Result<SurrogateCheck> {
    let target = gaussian_target(dim, NoiseModel::gaussian(sigma2)?);
    let origin = vec![0.0; dim];
    let noise = collect_noise_sample(
        &target,
        &origin,
        Some(0.0),
        noise_draws,
        1,
        Execution::Sequential,
        &mut stream(mix(seed, 4), 0),
    )?;
    let sigma2_hat = noise.variance();
    let lambda = proposal_scale(gamma, dim);
    let proposal = ProposalSpec::isotropic(lambda, dim)?;
    let stats = run_chain(
        &origin,
        &target,
        &proposal,
        &RunConfig::new(n_iters).burn_in(n_iters / 10),
        &mut stream(mix(seed, 5), 0),
    )?;
    let predicted = predicted_acceptance(sigma2_hat, gamma);
    let finite_d =
        crate::limit::finite_d_gaussian(lambda, dim, sigma2, QuadSpec::default())?.acceptance;
    Ok(SurrogateCheck {
        dim,
        gamma,
        sigma2,
        sigma2_hat,
        acceptance: stats.acceptance_rate,
        acceptance_se: stats.acceptance_se,
        predicted,
        finite_d,
        z_score: (stats.acceptance_rate - predicted) / stats.acceptance_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StudyConfig {
        StudyConfig {
            t_max: 4.0,
            ms: vec![10, 20, 40],
            gammas: vec![0.8],
            n_iters: 200,
            thin: 2,
            noise_draws: 100,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn configs() {
        let d = StudyConfig::default();
        assert_eq!(
            (d.t_max, d.ms.len() * d.gammas.len(), d.n_iters),
            (10.0, 9, 20_000)
        );
        let p = StudyConfig::full_scale();
        assert_eq!(p.ms, vec![50, 80, 100, 150, 200, 300, 400]);
        assert_eq!(p.gammas.len(), 7);
        assert!((p.gammas[0] - 0.4).abs() < 1e-12 && (p.gammas[6] - 1.6).abs() < 1e-12);
        assert_eq!(p.iterations_for(50), 1_000_000);
        assert_eq!(p.iterations_for(100), 250_000);
        assert!(StudyConfig {
            gammas: vec![0.0],
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(StudyConfig {
            anchor: Some(vec![0.0; 3]),
            ..tiny()
        }
        .validate()
        .is_err());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<StudyConfig>(&json).unwrap(), d);
    }

    #[test]
    fn scales_and_prediction() {
        assert!((proposal_scale(1.0, 5) - 2.56 / 5f64.sqrt()).abs() < 1e-15);
        // the acceptance quoted for the optimum of the full study
        assert!((predicted_acceptance(2.1, 0.8) - 0.147).abs() < 5e-4);
    }

    #[test]
    fn tiny_study_runs_and_is_execution_independent() {
        let c = tiny();
        let a = run_study(&c, 7, Execution::Sequential).unwrap();
        let b = run_study(&c, 7, Execution::Parallel).unwrap();
        assert_eq!(a.cells.len(), 3);
        assert_eq!(a.n_observations, 4);
        assert_eq!(a.warnings.len(), 1);
        assert!(a.variance_slope.is_some());
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(
                (x.acceptance, x.esjd, x.total_cost),
                (y.acceptance, y.esjd, y.total_cost)
            );
        }
        assert_eq!(a.noise, b.noise);
        assert!(a.noise[0].variance > a.noise[2].variance);
    }

    #[test]
    fn pilot_estimates_covariance() {
        let c = tiny();
        let p = pilot_run(
            &c,
            &PilotConfig {
                m: 20,
                n_iters: 200,
                step: 0.05,
            },
            8,
        )
        .unwrap();
        assert_eq!(p.covariance.len(), 5);
        for i in 0..5 {
            assert!(p.covariance[i][i] >= 0.0);
            for j in 0..5 {
                assert_eq!(p.covariance[i][j], p.covariance[j][i]);
            }
        }
        let mut c2 = c.clone();
        p.apply(&mut c2);
        assert!(c2.validate().is_ok());
    }

    #[test]
    fn surrogate_without_noise_matches_finite_d() {
        let s = gaussian_surrogate_check(5, 1e-12, 1.0, 20_000, 200, 9).unwrap();
        assert!((s.acceptance - s.finite_d).abs() < 4.0 * s.acceptance_se);
    }
}
