//! Pseudo-marginal random-walk Metropolis.
//!
//! A [`LogTargetEstimator`] returns a fresh noisy estimate of the log-target on
//! every call. The chain keeps the estimate attached to its current position
//! and never refreshes it: a proposal `x* = x + lambda L z` is accepted with
//! probability `1 ^ exp(log pi_hat(x*) - stored)`, and only then does the stored
//! value change.

use crate::noise::NoiseModel;
use crate::numeric::stats::{batch_means_se, effective_sample_size};
use crate::{error::invalid, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::collections::BTreeMap;

/// One noisy evaluation of the log-target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_estimate: f64,
    pub cost: f64,
}

/// Source of noisy log-target evaluations. Each call must use fresh auxiliary
/// randomness drawn from `rng`.
pub trait LogTargetEstimator {
    fn dim(&self) -> usize;
    fn estimate(&self, x: &[f64], rng: &mut dyn RngCore) -> Evaluation;
}

impl<E: LogTargetEstimator + ?Sized> LogTargetEstimator for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn estimate(&self, x: &[f64], rng: &mut dyn RngCore) -> Evaluation {
        (**self).estimate(x, rng)
    }
}

/// An exact log-density corrupted by additive noise drawn from a
/// [`NoiseModel`], independently of position. `NoiseModel::None` gives the
/// exact target.
pub struct SyntheticNoiseTarget<F> {
    dim: usize,
    log_density: F,
    noise: NoiseModel,
    cost: f64,
}

impl<F: Fn(&[f64]) -> f64> SyntheticNoiseTarget<F> {
    /// Cost per evaluation defaults to `1 / sigma2` (one unit when exact).
    pub fn new(dim: usize, log_density: F, noise: NoiseModel) -> Self {
        let s2 = noise.sigma2();
        let cost = if s2 > 0.0 { 1.0 / s2 } else { 1.0 };
        Self {
            dim,
            log_density,
            noise,
            cost,
        }
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
}

impl<F: Fn(&[f64]) -> f64> LogTargetEstimator for SyntheticNoiseTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn estimate(&self, x: &[f64], rng: &mut dyn RngCore) -> Evaluation {
        Evaluation {
            log_estimate: (self.log_density)(x) + self.noise.draw_proposal(rng),
            cost: self.cost,
        }
    }
}

/// Log-density of `N(0, I_d)` up to a constant.
pub fn standard_gaussian_log_density(x: &[f64]) -> f64 {
    -0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

/// Standard Gaussian target of dimension `dim` with synthetic noise.
pub fn gaussian_target(dim: usize, noise: NoiseModel) -> SyntheticNoiseTarget<fn(&[f64]) -> f64> {
    SyntheticNoiseTarget::new(
        dim,
        standard_gaussian_log_density as fn(&[f64]) -> f64,
        noise,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    /// Estimate attached to `position`, carried from the accepted evaluation.
    pub stored_log_estimate: f64,
    pub iteration: usize,
}

impl ChainState {
    /// Evaluates the estimator once at `position`; the estimate must be finite.
    pub fn initialize<E: LogTargetEstimator + ?Sized>(
        position: Vec<f64>,
        estimator: &E,
        rng: &mut dyn RngCore,
    ) -> Result<(Self, f64)> {
        if position.len() != estimator.dim() {
            return Err(Error::Dimension {
                expected: estimator.dim(),
                got: position.len(),
            });
        }
        let eval = estimator.estimate(&position, rng);
        if !eval.log_estimate.is_finite() {
            return Err(Error::InvalidInitialState(eval.log_estimate));
        }
        Ok((
            Self {
                position,
                stored_log_estimate: eval.log_estimate,
                iteration: 0,
            },
            eval.cost,
        ))
    }
}

/// Proposal `x + lambda * L z` with `L` lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSpec {
    scale_lambda: f64,
    covariance_root: DMatrix<f64>,
}

impl ProposalSpec {
    pub fn isotropic(scale_lambda: f64, dim: usize) -> Result<Self> {
        Self::from_root(scale_lambda, DMatrix::identity(dim, dim))
    }

    /// Uses the Cholesky factor of `covariance`.
    pub fn with_covariance(scale_lambda: f64, covariance: DMatrix<f64>) -> Result<Self> {
        let chol = covariance
            .cholesky()
            .ok_or_else(|| invalid("proposal covariance is not positive definite"))?;
        Self::from_root(scale_lambda, chol.l())
    }

    pub fn from_root(scale_lambda: f64, covariance_root: DMatrix<f64>) -> Result<Self> {
        if !(scale_lambda > 0.0 && scale_lambda.is_finite()) {
            return Err(invalid(format!(
                "proposal scale must be positive, got {scale_lambda}"
            )));
        }
        if !covariance_root.is_square() {
            return Err(invalid("covariance root must be square"));
        }
        if covariance_root.diagonal().iter().any(|v| !(*v > 0.0)) {
            return Err(invalid(
                "covariance root needs a strictly positive diagonal",
            ));
        }
        if covariance_root.upper_triangle() != DMatrix::from_diagonal(&covariance_root.diagonal()) {
            return Err(invalid("covariance root must be lower triangular"));
        }
        Ok(Self {
            scale_lambda,
            covariance_root,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale_lambda
    }

    pub fn dim(&self) -> usize {
        self.covariance_root.nrows()
    }

    pub fn covariance_root(&self) -> &DMatrix<f64> {
        &self.covariance_root
    }

    fn propose(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
        let step = &self.covariance_root * z * self.scale_lambda;
        x.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }
}

/// What happened in one kernel step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub accepted: bool,
    pub proposed: Vec<f64>,
    pub proposed_log_estimate: f64,
    pub cost: f64,
}

/// One pseudo-marginal RWM transition, in place. A proposal whose estimate is
/// `-inf` or NaN is rejected.
pub fn step<E: LogTargetEstimator + ?Sized>(
    state: &mut ChainState,
    estimator: &E,
    proposal: &ProposalSpec,
    rng: &mut dyn RngCore,
) -> Result<StepRecord> {
    if state.position.len() != estimator.dim() || proposal.dim() != estimator.dim() {
        return Err(Error::Dimension {
            expected: estimator.dim(),
            got: state.position.len().max(proposal.dim()),
        });
    }
    let proposed = proposal.propose(&state.position, rng);
    let eval = estimator.estimate(&proposed, rng);
    let log_ratio = eval.log_estimate - state.stored_log_estimate;
    let u: f64 = rng.random();
    let accepted = !log_ratio.is_nan() && (log_ratio >= 0.0 || u.ln() < log_ratio);
    if accepted {
        state.position.clone_from(&proposed);
        state.stored_log_estimate = eval.log_estimate;
    }
    state.iteration += 1;
    Ok(StepRecord {
        accepted,
        proposed,
        proposed_log_estimate: eval.log_estimate,
        cost: eval.cost,
    })
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_iters: usize,
    /// Iterations run before statistics are collected.
    pub burn_in: usize,
    /// Metric `T` for the squared jump `<dx, T dx>`; identity when `None`.
    pub metric: Option<DMatrix<f64>>,
    /// Keep the trace (every `thin`-th iteration) and per-iteration
    /// acceptance flags.
    pub record: bool,
    pub thin: usize,
}

impl RunConfig {
    pub fn new(n_iters: usize) -> Self {
        Self {
            n_iters,
            burn_in: 0,
            metric: None,
            record: false,
            thin: 1,
        }
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn recorded(mut self, thin: usize) -> Self {
        self.record = true;
        self.thin = thin.max(1);
        self
    }

    pub fn metric(mut self, metric: DMatrix<f64>) -> Self {
        self.metric = Some(metric);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub accepted: bool,
    pub log_estimate: f64,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trace {
    pub thin: usize,
    pub rows: Vec<TraceRow>,
    /// Acceptance flag of every post-burn-in iteration (not thinned).
    pub accepted: Vec<bool>,
}

impl Trace {
    /// Thinned rows as `iter,accepted,log_estimate,x_1,...,x_d`.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.rows.first().map_or(0, |r| r.position.len());
        let mut header = vec!["iter".to_string(), "accepted".into(), "log_estimate".into()];
        header.extend((1..=d).map(|k| format!("x_{k}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.iter.to_string(),
                u8::from(r.accepted).to_string(),
                r.log_estimate.to_string(),
            ];
            rec.extend(r.position.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatistics {
    pub n_iters: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Batch-means standard error of the acceptance rate.
    pub acceptance_se: f64,
    pub esjd: f64,
    pub esjd_se: f64,
    #[serde(skip)]
    pub esjd_metric: DMatrix<f64>,
    /// Geyer ESS of each coordinate over the recorded (thinned) trace; empty
    /// when recording is off.
    pub ess_per_coordinate: Vec<f64>,
    pub total_cost: f64,
    #[serde(skip)]
    pub trace: Option<Trace>,
    pub final_state: Vec<f64>,
}

impl RunStatistics {
    pub fn min_ess(&self) -> Option<f64> {
        self.ess_per_coordinate
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .reduce(f64::min)
    }
}

/// Runs the kernel from `initial` for `burn_in + n_iters` iterations.
pub fn run_chain<E: LogTargetEstimator + ?Sized>(
    initial: &[f64],
    estimator: &E,
    proposal: &ProposalSpec,
    config: &RunConfig,
    rng: &mut dyn RngCore,
) -> Result<RunStatistics> {
    if config.n_iters == 0 {
        return Err(invalid("n_iters must be >= 1"));
    }
    let d = estimator.dim();
    let metric = match &config.metric {
        Some(m) if m.nrows() != d || m.ncols() != d => {
            return Err(Error::Dimension {
                expected: d,
                got: m.nrows(),
            })
        }
        Some(m) => m.clone(),
        None => DMatrix::identity(d, d),
    };
    let identity_metric = config.metric.is_none();
    let (mut state, init_cost) = ChainState::initialize(initial.to_vec(), estimator, rng)?;
    let mut total_cost = init_cost;
    for _ in 0..config.burn_in {
        total_cost += step(&mut state, estimator, proposal, rng)?.cost;
    }

    let mut sq_jumps = Vec::with_capacity(config.n_iters);
    let mut flags = Vec::with_capacity(config.n_iters);
    let mut rows = Vec::new();
    let mut accepted = 0usize;
    for i in 0..config.n_iters {
        let before = state.position.clone();
        let rec = step(&mut state, estimator, proposal, rng)?;
        total_cost += rec.cost;
        let jump = if rec.accepted {
            accepted += 1;
            let dx =
                DVector::from_iterator(d, state.position.iter().zip(&before).map(|(a, b)| a - b));
            if identity_metric {
                dx.norm_squared()
            } else {
                dx.dot(&(&metric * &dx))
            }
        } else {
            0.0
        };
        sq_jumps.push(jump);
        flags.push(rec.accepted);
        if config.record && i % config.thin == 0 {
            rows.push(TraceRow {
                iter: i,
                accepted: rec.accepted,
                log_estimate: state.stored_log_estimate,
                position: state.position.clone(),
            });
        }
    }

    let n = config.n_iters as f64;
    let indicator: Vec<f64> = flags.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let ess_per_coordinate = if config.record && rows.len() >= 4 {
        (0..d)
            .map(|k| {
                let series: Vec<f64> = rows.iter().map(|r| r.position[k]).collect();
                effective_sample_size(&series)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RunStatistics {
        n_iters: config.n_iters,
        accepted,
        acceptance_rate: accepted as f64 / n,
        acceptance_se: batch_means_se(&indicator),
        esjd: sq_jumps.iter().sum::<f64>() / n,
        esjd_se: batch_means_se(&sq_jumps),
        esjd_metric: metric,
        ess_per_coordinate,
        total_cost,
        trace: config.record.then_some(Trace {
            thin: config.thin,
            rows,
            accepted: flags,
        }),
        final_state: state.position,
    })
}

/// Histogram of consecutive-rejection run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StickyHistogram {
    /// run length -> number of runs
    pub counts: BTreeMap<usize, usize>,
    pub max_run: usize,
}

/// Counts, for every acceptance, the rejections that follow it before the next
/// acceptance. Rejections before the first acceptance form one more run.
pub fn sticky_patch_histogram(accepted: &[bool]) -> Result<StickyHistogram> {
    if accepted.is_empty() {
        return Err(Error::Empty("acceptance trace"));
    }
    let mut runs = Vec::new();
    let mut current: Option<usize> = if accepted[0] { None } else { Some(0) };
    for &a in accepted {
        if a {
            if let Some(r) = current.take() {
                runs.push(r);
            }
            current = Some(0);
        } else {
            *current.get_or_insert(0) += 1;
        }
    }
    if let Some(r) = current {
        runs.push(r);
    }
    let mut counts = BTreeMap::new();
    for &r in &runs {
        *counts.entry(r).or_insert(0) += 1;
    }
    Ok(StickyHistogram {
        max_run: runs.iter().copied().max().unwrap_or(0),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit::finite_d_gaussian;
    use crate::numeric::quadrature::QuadSpec;
    use crate::rng::stream;

    #[test]
    fn trace_csv_layout() {
        let target = gaussian_target(2, NoiseModel::gaussian(0.5).unwrap());
        let proposal = ProposalSpec::isotropic(1.0, 2).unwrap();
        let run = RunConfig::new(10).recorded(5);
        let stats = run_chain(&[0.0, 0.0], &target, &proposal, &run, &mut stream(90, 0)).unwrap();
        let mut buf = Vec::new();
        stats.trace.unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,accepted,log_estimate,x_1,x_2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("5,"));
    }

    #[test]
    fn uphill_moves_are_always_accepted() {
        let target = gaussian_target(1, NoiseModel::None);
        // tiny steps from far out: every proposal towards zero is uphill
        let prop = ProposalSpec::isotropic(1e-3, 1).unwrap();
        let mut rng = stream(1, 0);
        let (mut state, _) = ChainState::initialize(vec![10.0], &target, &mut rng).unwrap();
        for _ in 0..200 {
            let before = state.position[0];
            let rec = step(&mut state, &target, &prop, &mut rng).unwrap();
            if rec.proposed[0].abs() <= before.abs() {
                assert!(rec.accepted);
            }
        }
    }

    #[test]
    fn rejection_leaves_state_untouched() {
        struct Cliff;
        impl LogTargetEstimator for Cliff {
            fn dim(&self) -> usize {
                1
            }
            fn estimate(&self, x: &[f64], _: &mut dyn RngCore) -> Evaluation {
                Evaluation {
                    log_estimate: if x[0] == 0.0 { 0.0 } else { f64::NEG_INFINITY },
                    cost: 1.0,
                }
            }
        }
        let prop = ProposalSpec::isotropic(1.0, 1).unwrap();
        let mut rng = stream(2, 0);
        let (mut state, _) = ChainState::initialize(vec![0.0], &Cliff, &mut rng).unwrap();
        for _ in 0..50 {
            let rec = step(&mut state, &Cliff, &prop, &mut rng).unwrap();
            assert!(!rec.accepted);
            assert_eq!(state.position, vec![0.0]);
            assert_eq!(state.stored_log_estimate, 0.0);
        }
        assert_eq!(state.iteration, 50);
        assert!(matches!(
            ChainState::initialize(vec![1.0], &Cliff, &mut rng),
            Err(Error::InvalidInitialState(_))
        ));
    }

    #[test]
    fn stored_estimate_is_never_refreshed() {
        let target = gaussian_target(2, NoiseModel::gaussian(4.0).unwrap());
        let prop = ProposalSpec::isotropic(0.5, 2).unwrap();
        let mut rng = stream(3, 0);
        let (mut state, _) = ChainState::initialize(vec![0.0, 0.0], &target, &mut rng).unwrap();
        for _ in 0..500 {
            let before = state.stored_log_estimate;
            let rec = step(&mut state, &target, &prop, &mut rng).unwrap();
            if rec.accepted {
                assert_eq!(state.stored_log_estimate, rec.proposed_log_estimate);
            } else {
                assert_eq!(state.stored_log_estimate, before);
            }
        }
    }

    #[test]
    fn proposal_validation() {
        assert!(ProposalSpec::isotropic(0.0, 3).is_err());
        assert!(ProposalSpec::isotropic(-1.0, 3).is_err());
        let upper = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(ProposalSpec::from_root(1.0, upper).is_err());
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = ProposalSpec::with_covariance(1.0, cov.clone()).unwrap();
        let l = p.covariance_root();
        assert!((l * l.transpose() - cov).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let target = gaussian_target(3, NoiseModel::None);
        let prop = ProposalSpec::isotropic(1.0, 2).unwrap();
        let mut rng = stream(4, 0);
        assert!(run_chain(&[0.0; 3], &target, &prop, &RunConfig::new(10), &mut rng).is_err());
        let prop = ProposalSpec::isotropic(1.0, 3).unwrap();
        assert!(run_chain(&[0.0; 2], &target, &prop, &RunConfig::new(10), &mut rng).is_err());
        assert!(run_chain(&[0.0; 3], &target, &prop, &RunConfig::new(0), &mut rng).is_err());
    }

    #[test]
    fn exact_chain_acceptance_matches_finite_d_formula() {
        let d = 5;
        let lambda = 2.38 / (d as f64).sqrt();
        let target = gaussian_target(d, NoiseModel::None);
        let prop = ProposalSpec::isotropic(lambda, d).unwrap();
        let mut rng = stream(5, 0);
        let stats = run_chain(
            &[0.0; 5],
            &target,
            &prop,
            &RunConfig::new(100_000).burn_in(1_000),
            &mut rng,
        )
        .unwrap();
        let oracle = finite_d_gaussian(lambda, d, 0.0, QuadSpec::default()).unwrap();
        assert!(
            (stats.acceptance_rate - oracle.acceptance).abs() < 3.0 * stats.acceptance_se,
            "{} vs {} (se {})",
            stats.acceptance_rate,
            oracle.acceptance,
            stats.acceptance_se
        );
        assert_eq!(stats.acceptance_rate, stats.accepted as f64 / 100_000.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let target = gaussian_target(3, NoiseModel::gaussian(1.0).unwrap());
        let prop = ProposalSpec::isotropic(1.0, 3).unwrap();
        let cfg = RunConfig::new(2_000).recorded(1);
        let a = run_chain(&[0.0; 3], &target, &prop, &cfg, &mut stream(9, 0)).unwrap();
        let b = run_chain(&[0.0; 3], &target, &prop, &cfg, &mut stream(9, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.as_ref().unwrap().rows.len(), 2_000);
        assert_eq!(a.ess_per_coordinate.len(), 3);
    }

    #[test]
    fn metric_weights_the_jump() {
        let target = gaussian_target(2, NoiseModel::None);
        let prop = ProposalSpec::isotropic(0.8, 2).unwrap();
        let eye = run_chain(
            &[0.0; 2],
            &target,
            &prop,
            &RunConfig::new(5_000),
            &mut stream(10, 0),
        )
        .unwrap();
        let doubled = run_chain(
            &[0.0; 2],
            &target,
            &prop,
            &RunConfig::new(5_000).metric(DMatrix::identity(2, 2) * 2.0),
            &mut stream(10, 0),
        )
        .unwrap();
        assert!((doubled.esjd - 2.0 * eye.esjd).abs() < 1e-12);
    }

    #[test]
    fn sticky_histogram_edge_cases() {
        let all = sticky_patch_histogram(&[true; 6]).unwrap();
        assert_eq!(all.counts, BTreeMap::from([(0, 6)]));
        assert_eq!(all.max_run, 0);
        let alt: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let h = sticky_patch_histogram(&alt).unwrap();
        assert_eq!(h.counts, BTreeMap::from([(1, 5)]));
        let lead = sticky_patch_histogram(&[false, false, true, false]).unwrap();
        assert_eq!(lead.counts, BTreeMap::from([(1, 1), (2, 1)]));
        assert!(sticky_patch_histogram(&[]).is_err());
    }
}
