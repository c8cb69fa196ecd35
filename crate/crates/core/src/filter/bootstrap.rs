use super::{ObservedSeries, StateSpaceModel};
use crate::numeric::stats::log_sum_exp;
use crate::par::{map_indexed, Execution};
use crate::rng;
use crate::sampler::{Evaluation, LogTargetEstimator};
use crate::{error::invalid, Result};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Multinomial,
    #[default]
    Systematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleFilterConfig {
    pub m: usize,
    #[serde(default)]
    pub resampling: Resampling,
    /// Propagate particles on the rayon pool. Results do not change: each
    /// particle draws from its own substream.
    #[serde(skip, default = "sequential")]
    pub exec: Execution,
}

fn sequential() -> Execution {
    Execution::Sequential
}

impl ParticleFilterConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            resampling: Resampling::Systematic,
            exec: Execution::Sequential,
        }
    }

    pub fn resampling(mut self, resampling: Resampling) -> Self {
        self.resampling = resampling;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfEstimate {
    pub log_estimate: f64,
    /// `m` times the number of observation intervals.
    pub cost: f64,
}

fn resample(log_w: &[f64], scheme: Resampling, rng: &mut dyn RngCore) -> Vec<usize> {
    let m = log_w.len();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &lw in log_w {
        acc += (lw - max).exp();
        cdf.push(acc);
    }
    let pick = |u: f64, from: usize| {
        let target = u * acc;
        let mut j = from;
        while j + 1 < m && cdf[j] <= target {
            j += 1;
        }
        j
    };
    match scheme {
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / m as f64;
            let mut j = 0;
            (0..m)
                .map(|i| {
                    j = pick(u0 + i as f64 / m as f64, j);
                    j
                })
                .collect()
        }
        Resampling::Multinomial => (0..m)
            .map(|_| {
                let u: f64 = rng.random();
                cdf.partition_point(|&c| c <= u * acc).min(m - 1)
            })
            .collect(),
    }
}

/// Bootstrap particle filter estimate of the log-likelihood.
///
/// Particles are propagated through the latent dynamics between observation
/// times, weighted by the observation density and resampled after every
/// observation. The estimate is `sum_t log(mean_i w_ti)`, computed with
/// log-sum-exp; it is `-inf` when every weight vanishes at some time.
pub fn bootstrap_log_likelihood<M: StateSpaceModel>(
    model: &M,
    data: &ObservedSeries,
    params: &M::Params,
    config: &ParticleFilterConfig,
    rng: &mut dyn RngCore,
) -> Result<PfEstimate> {
    let m = config.m;
    if m == 0 {
        return Err(invalid("particle count must be >= 1"));
    }
    let cost = (m * data.len()) as f64;
    let base = rng.next_u64();
    let mut particles: Vec<M::State> = map_indexed(config.exec, m, |i| {
        model.initial_state(params, &mut rng::stream(rng::mix(base, 0), i as u64))
    });
    let mut ancestors: Vec<usize> = (0..m).collect();
    let mut log_lik = 0.0;
    let mut t_prev = data.t0();
    for (k, (&t, y)) in data.times().iter().zip(data.values()).enumerate() {
        let stream_key = rng::mix(base, k as u64 + 1);
        let moved: Vec<(M::State, f64)> = map_indexed(config.exec, m, |i| {
            let mut s = particles[ancestors[i]].clone();
            model.transition(
                &mut s,
                t_prev,
                t,
                params,
                &mut rng::stream(stream_key, i as u64),
            );
            let lw = model.observation_log_density(y, &s, params);
            (s, if lw.is_nan() { f64::NEG_INFINITY } else { lw })
        });
        let log_w: Vec<f64> = moved.iter().map(|p| p.1).collect();
        let lse = log_sum_exp(&log_w);
        if lse == f64::NEG_INFINITY {
            return Ok(PfEstimate {
                log_estimate: f64::NEG_INFINITY,
                cost,
            });
        }
        log_lik += lse - (m as f64).ln();
        ancestors = resample(&log_w, config.resampling, rng);
        particles = moved.into_iter().map(|p| p.0).collect();
        t_prev = t;
    }
    Ok(PfEstimate {
        log_estimate: log_lik,
        cost,
    })
}

/// Particle-marginal log-posterior over a parameter vector `theta` with a
/// uniform prior on `[lo, hi]^d`: outside the support the estimate is `-inf`
/// and no filter is run.
pub struct ParticleMarginalPosterior<'a, M, F> {
    pub model: &'a M,
    pub data: &'a ObservedSeries,
    pub config: ParticleFilterConfig,
    pub support: (f64, f64),
    pub dim: usize,
    pub to_params: F,
}

impl<'a, M, F> ParticleMarginalPosterior<'a, M, F>
where
    M: StateSpaceModel,
    F: Fn(&[f64]) -> M::Params,
{
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let (lo, hi) = self.support;
        if theta.iter().all(|v| (lo..=hi).contains(v)) {
            -(self.dim as f64) * (hi - lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl<'a, M, F> LogTargetEstimator for ParticleMarginalPosterior<'a, M, F>
where
    M: StateSpaceModel,
    F: Fn(&[f64]) -> M::Params,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn estimate(&self, theta: &[f64], rng: &mut dyn RngCore) -> Evaluation {
        let prior = self.log_prior(theta);
        if prior == f64::NEG_INFINITY {
            return Evaluation {
                log_estimate: f64::NEG_INFINITY,
                cost: 0.0,
            };
        }
        let params = (self.to_params)(theta);
        match bootstrap_log_likelihood(self.model, self.data, &params, &self.config, rng) {
            Ok(pf) => Evaluation {
                log_estimate: pf.log_estimate + prior,
                cost: pf.cost,
            },
            Err(_) => Evaluation {
                log_estimate: f64::NAN,
                cost: 0.0,
            },
        }
    }
}
