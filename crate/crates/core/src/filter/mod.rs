//! Bootstrap particle filtering for state-space models.
//!
//! [`bootstrap_log_likelihood`] returns a log-likelihood estimate whose
//! exponential is unbiased for the likelihood; [`ParticleMarginalPosterior`]
//! wraps it as a [`LogTargetEstimator`](crate::sampler::LogTargetEstimator)
//! over log-parameters for the particle-marginal sampler.

mod bootstrap;
mod linear_gaussian;
mod lotka_volterra;
mod series;

pub use bootstrap::{
    bootstrap_log_likelihood, ParticleFilterConfig, ParticleMarginalPosterior, PfEstimate,
    Resampling,
};
pub use linear_gaussian::{kalman_log_likelihood, LinearGaussian};
pub use lotka_volterra::{
    gillespie_step, lv_observation_logpdf, lv_posterior, lv_rates, lv_synthesize_data, next_event,
    LotkaVolterra, LvDataset, LvParams, LvPosterior, LvState, DEFAULT_MAX_EVENTS, LV_PRIOR_SUPPORT,
};
pub use series::ObservedSeries;

use rand::RngCore;

/// A latent Markov process observed with noise at the times of an
/// [`ObservedSeries`].
pub trait StateSpaceModel: Sync {
    type State: Clone + Send + Sync;
    type Params: Sync;

    fn initial_state(&self, params: &Self::Params, rng: &mut dyn RngCore) -> Self::State;

    /// Advances `state` from time `t0` to `t1`.
    fn transition(
        &self,
        state: &mut Self::State,
        t0: f64,
        t1: f64,
        params: &Self::Params,
        rng: &mut dyn RngCore,
    );

    fn observation_log_density(&self, y: &[f64], state: &Self::State, params: &Self::Params)
        -> f64;
}
