use super::{ObservedSeries, StateSpaceModel};
use crate::{error::invalid, Result};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Scalar autoregressive state `x_k = a x_{k-1} + N(0, q)` observed as
/// `y_k = c x_k + N(0, r)` at unit time steps, with `x_0 ~ N(m0, p0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub a: f64,
    pub q: f64,
    pub c: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl LinearGaussian {
    pub fn new(a: f64, q: f64, c: f64, r: f64, m0: f64, p0: f64) -> Result<Self> {
        if [a, q, c, r, m0, p0].iter().any(|v| !v.is_finite()) {
            return Err(invalid("linear-Gaussian coefficients must be finite"));
        }
        if q <= 0.0 || r <= 0.0 || p0 < 0.0 {
            return Err(invalid(format!(
                "variances must be positive: q={q}, r={r}, p0={p0}"
            )));
        }
        Ok(Self { a, q, c, r, m0, p0 })
    }

    /// Observations at times `1, ..., n`.
    pub fn simulate(&self, n: usize, rng: &mut dyn RngCore) -> Result<ObservedSeries> {
        let mut x = self.initial_state(&(), rng);
        let mut times = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for k in 1..=n {
            self.transition(&mut x, (k - 1) as f64, k as f64, &(), rng);
            let e: f64 = StandardNormal.sample(rng);
            times.push(k as f64);
            values.push(vec![self.c * x + self.r.sqrt() * e]);
        }
        ObservedSeries::new(0.0, times, values)
    }
}

impl StateSpaceModel for LinearGaussian {
    type State = f64;
    type Params = ();

    fn initial_state(&self, _: &(), rng: &mut dyn RngCore) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.m0 + self.p0.sqrt() * e
    }

    /// One autoregressive step per observation interval regardless of its length.
    fn transition(&self, x: &mut f64, _: f64, _: f64, _: &(), rng: &mut dyn RngCore) {
        let e: f64 = StandardNormal.sample(rng);
        *x = self.a * *x + self.q.sqrt() * e;
    }

    fn observation_log_density(&self, y: &[f64], x: &f64, _: &()) -> f64 {
        let r = y[0] - self.c * x;
        -0.5 * (2.0 * PI * self.r).ln() - 0.5 * r * r / self.r
    }
}

/// Exact marginal log-likelihood by the Kalman prediction/update recursion.
pub fn kalman_log_likelihood(model: &LinearGaussian, obs: &ObservedSeries) -> Result<f64> {
    let lg = LinearGaussian::new(model.a, model.q, model.c, model.r, model.m0, model.p0)?;
    let (mut m, mut p) = (lg.m0, lg.p0);
    let mut ll = 0.0;
    for y in obs.values() {
        m *= lg.a;
        p = lg.a * lg.a * p + lg.q;
        let s = lg.c * lg.c * p + lg.r;
        let innov = y[0] - lg.c * m;
        ll += -0.5 * (2.0 * PI * s).ln() - 0.5 * innov * innov / s;
        let gain = p * lg.c / s;
        m += gain * innov;
        p *= 1.0 - gain * lg.c;
    }
    Ok(ll)
}
