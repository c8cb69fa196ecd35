use super::bootstrap::{ParticleFilterConfig, ParticleMarginalPosterior};
use super::{ObservedSeries, StateSpaceModel};
use crate::{error::invalid, Result};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Support of the uniform prior on each log-parameter.
pub const LV_PRIOR_SUPPORT: (f64, f64) = (-8.0, 8.0);

/// Default cap on the number of Gillespie events per observation interval.
pub const DEFAULT_MAX_EVENTS: usize = 10_000;

/// Predation rate `x1`, predator death rate `x2`, prey birth rate `x3` and
/// observation variances `x4`, `x5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvParams {
    pub x: [f64; 5],
}

impl LvParams {
    pub fn new(x: [f64; 5]) -> Result<Self> {
        if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!(
                "rates must be finite and non-negative: {x:?}"
            )));
        }
        if x[3] <= 0.0 || x[4] <= 0.0 {
            return Err(invalid("observation variances must be positive"));
        }
        Ok(Self { x })
    }

    /// Exponentiates `theta = (log x1, ..., log x5)` without validation.
    pub fn from_log(theta: &[f64]) -> Self {
        let mut x = [0.0; 5];
        for (xi, t) in x.iter_mut().zip(theta) {
            *xi = t.exp();
        }
        Self { x }
    }

    pub fn to_log(&self) -> [f64; 5] {
        self.x.map(f64::ln)
    }

    /// The data-generating values (0.006, 0.6, 0.3, 25, 49).
    pub fn reference() -> Self {
        Self {
            x: [0.006, 0.6, 0.3, 25.0, 49.0],
        }
    }
}

/// Predator and prey counts. `exploded` marks a path that hit the event cap;
/// its observation density is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LvState {
    pub u: [u64; 2],
    pub exploded: bool,
}

impl LvState {
    pub fn new(u1: u64, u2: u64) -> Self {
        Self {
            u: [u1, u2],
            exploded: false,
        }
    }
}

/// Rates of predation `(+1, -1)`, predator death `(-1, 0)` and prey birth `(0, +1)`.
pub fn lv_rates(u: [u64; 2], params: &LvParams) -> [f64; 3] {
    let (u1, u2) = (u[0] as f64, u[1] as f64);
    [params.x[0] * u1 * u2, params.x[1] * u1, params.x[2] * u2]
}

/// Draws the holding time and the index of the next transition, or `None`
/// in an absorbing state.
pub fn next_event(u: [u64; 2], params: &LvParams, rng: &mut dyn RngCore) -> Option<(f64, usize)> {
    let rates = lv_rates(u, params);
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let e: f64 = Exp1.sample(rng);
    let pick = rng.random::<f64>() * total;
    let k = if pick < rates[0] {
        0
    } else if pick < rates[0] + rates[1] {
        1
    } else {
        2
    };
    Some((e / total, k))
}

fn apply(u: &mut [u64; 2], k: usize) {
    match k {
        0 => {
            u[0] += 1;
            u[1] -= 1;
        }
        1 => u[0] -= 1,
        _ => u[1] += 1,
    }
}

/// Exact event-by-event simulation from `t0` to `t_end`. Stops early and sets
/// `exploded` once `max_events` events have occurred.
pub fn gillespie_step(
    state: LvState,
    params: &LvParams,
    t0: f64,
    t_end: f64,
    max_events: usize,
    rng: &mut dyn RngCore,
) -> LvState {
    let mut s = state;
    if s.exploded {
        return s;
    }
    let mut t = t0;
    let mut events = 0usize;
    while let Some((hold, k)) = next_event(s.u, params, rng) {
        t += hold;
        if t > t_end {
            break;
        }
        if events == max_events {
            s.exploded = true;
            break;
        }
        apply(&mut s.u, k);
        events += 1;
    }
    s
}

/// Independent Gaussian errors with variances `x4`, `x5` on the two counts.
pub fn lv_observation_logpdf(y: &[f64], u: [u64; 2], params: &LvParams) -> f64 {
    let term = |y: f64, u: u64, v: f64| {
        let r = y - u as f64;
        -0.5 * (2.0 * PI * v).ln() - 0.5 * r * r / v
    };
    term(y[0], u[0], params.x[3]) + term(y[1], u[1], params.x[4])
}

/// Lotka-Volterra jump process with a known initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterra {
    pub u0: [u64; 2],
    pub max_events: usize,
}

impl LotkaVolterra {
    pub fn new(u0: [u64; 2]) -> Self {
        Self {
            u0,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl StateSpaceModel for LotkaVolterra {
    type State = LvState;
    type Params = LvParams;

    fn initial_state(&self, _: &LvParams, _: &mut dyn RngCore) -> LvState {
        LvState::new(self.u0[0], self.u0[1])
    }

    fn transition(
        &self,
        state: &mut LvState,
        t0: f64,
        t1: f64,
        params: &LvParams,
        rng: &mut dyn RngCore,
    ) {
        *state = gillespie_step(*state, params, t0, t1, self.max_events, rng);
    }

    fn observation_log_density(&self, y: &[f64], state: &LvState, params: &LvParams) -> f64 {
        if state.exploded {
            f64::NEG_INFINITY
        } else {
            lv_observation_logpdf(y, state.u, params)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LvDataset {
    pub model: LotkaVolterra,
    pub data: ObservedSeries,
    /// Latent counts at the observation times.
    pub latent: Vec<[u64; 2]>,
}

/// Simulates a path from `u0` at time 0 and records it with Gaussian error at
/// `dt, 2 dt, ...` up to `t_max`.
pub fn lv_synthesize_data(
    params: &LvParams,
    u0: [u64; 2],
    t_max: f64,
    dt: f64,
    rng: &mut dyn RngCore,
) -> Result<LvDataset> {
    if !(dt > 0.0) || !(t_max >= dt) {
        return Err(invalid(format!(
            "need 0 < dt <= t_max, got dt={dt}, t_max={t_max}"
        )));
    }
    let params = LvParams::new(params.x)?;
    let model = LotkaVolterra::new(u0);
    let n = (t_max / dt + 1e-9).floor() as usize;
    let noise = [
        Normal::new(0.0, params.x[3].sqrt()).unwrap(),
        Normal::new(0.0, params.x[4].sqrt()).unwrap(),
    ];
    let mut state = LvState::new(u0[0], u0[1]);
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut t_prev = 0.0;
    for k in 1..=n {
        let t = k as f64 * dt;
        state = gillespie_step(state, &params, t_prev, t, usize::MAX, rng);
        times.push(t);
        latent.push(state.u);
        values.push(vec![
            state.u[0] as f64 + noise[0].sample(rng),
            state.u[1] as f64 + noise[1].sample(rng),
        ]);
        t_prev = t;
    }
    Ok(LvDataset {
        model,
        data: ObservedSeries::new(0.0, times, values)?,
        latent,
    })
}

pub type LvPosterior<'a> = ParticleMarginalPosterior<'a, LotkaVolterra, fn(&[f64]) -> LvParams>;

fn lv_params_from_log(theta: &[f64]) -> LvParams {
    LvParams::from_log(theta)
}

/// Particle-marginal posterior over `(log x1, ..., log x5)` with independent
/// `Unif[-8, 8]` priors.
pub fn lv_posterior<'a>(
    model: &'a LotkaVolterra,
    data: &'a ObservedSeries,
    config: ParticleFilterConfig,
) -> LvPosterior<'a> {
    ParticleMarginalPosterior {
        model,
        data,
        config,
        support: LV_PRIOR_SUPPORT,
        dim: 5,
        to_params: lv_params_from_log as fn(&[f64]) -> LvParams,
    }
}
