//! Additive noise in the estimated log-target.
//!
//! For an unbiased estimator `pi_hat(x)` write `log pi_hat(x) = log pi(x) + W`.
//! A fresh estimate at a proposal carries noise `W* ~ g*`, normalised so that
//! `E[exp W*] = 1`. At stationarity the noise attached to the current state
//! follows the tilted law `exp(w) g*(w)`, and acceptance is driven by the
//! difference `B = W* - W`, whose density satisfies `rho(b) = exp(-b) rho(-b)`.

use crate::numeric::norm_log_pdf;
use crate::numeric::stats::log_mean_exp;
use crate::{error::invalid, Error, Result};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Exact evaluation, `W* = 0`.
    None,
    /// `W* ~ Normal(-sigma2 / 2, sigma2)`.
    Gaussian {
        sigma2: f64,
    },
    /// Laplace with location `ln(1 - sigma2 / 2)` and scale `sigma / sqrt 2`,
    /// which has variance `sigma2`. Requires `sigma2 < 2`.
    Laplace {
        sigma2: f64,
    },
    Empirical(EmpiricalNoise),
}

/// Noise law given by a finite sample of `w*` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalNoise {
    raw: Vec<f64>,
    centred: Vec<f64>,
    tilt: WeightedIndex<f64>,
}

impl EmpiricalNoise {
    /// Stores the draws and a recentred copy, shifted by the log of the sample
    /// mean of `exp(w)` so that the empirical `E[exp W*]` is exactly one.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("empirical noise samples"));
        }
        if samples.iter().any(|w| !w.is_finite()) {
            return Err(invalid("empirical noise samples must be finite"));
        }
        let shift = log_mean_exp(&samples);
        let centred: Vec<f64> = samples.iter().map(|w| w - shift).collect();
        let max = centred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = centred.iter().map(|w| (w - max).exp()).collect();
        let tilt = WeightedIndex::new(weights).map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            raw: samples,
            centred,
            tilt,
        })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn centred(&self) -> &[f64] {
        &self.centred
    }
}

impl NoiseModel {
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(invalid(format!(
                "gaussian sigma2 must be >= 0, got {sigma2}"
            )));
        }
        Ok(if sigma2 == 0.0 {
            NoiseModel::None
        } else {
            NoiseModel::Gaussian { sigma2 }
        })
    }

    pub fn laplace(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2 < 2.0) {
            return Err(invalid(format!(
                "laplace sigma2 must lie in (0, 2), got {sigma2}"
            )));
        }
        Ok(NoiseModel::Laplace { sigma2 })
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self> {
        EmpiricalNoise::new(samples).map(NoiseModel::Empirical)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseModel::None => "none",
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::Laplace { .. } => "laplace",
            NoiseModel::Empirical(_) => "empirical",
        }
    }

    /// Variance of `W*` (sample variance of the centred draws for empirical).
    pub fn sigma2(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma2 } | NoiseModel::Laplace { sigma2 } => *sigma2,
            NoiseModel::Empirical(e) => {
                if e.centred.len() < 2 {
                    0.0
                } else {
                    crate::numeric::stats::variance(&e.centred)
                }
            }
        }
    }

    /// One draw of `W*` from `g*`.
    pub fn draw_proposal(&self, rng: &mut (impl RngCore + ?Sized)) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma2 } => {
                let z: f64 = StandardNormal.sample(rng);
                -0.5 * sigma2 + sigma2.sqrt() * z
            }
            NoiseModel::Laplace { sigma2 } => {
                let (loc, scale) = laplace_params(*sigma2);
                let u: f64 = rng.random::<f64>() - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseModel::Empirical(e) => e.centred[rng.random_range(0..e.centred.len())],
        }
    }

    /// One draw of the stationary noise `W`, density proportional to `exp(w) g*(w)`.
    pub fn draw_stationary(&self, rng: &mut (impl RngCore + ?Sized)) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma2 } => {
                let z: f64 = StandardNormal.sample(rng);
                0.5 * sigma2 + sigma2.sqrt() * z
            }
            NoiseModel::Laplace { sigma2 } => {
                let (loc, scale) = laplace_params(*sigma2);
                // exp(u) exp(-|u|/b): rate (1+b)/b to the left, (1-b)/b to the right
                let left_rate = (1.0 + scale) / scale;
                let right_rate = (1.0 - scale) / scale;
                let p_left = 0.5 * (1.0 - scale);
                let u: f64 = rng.random();
                if u < p_left {
                    loc + (u / p_left).ln() / left_rate
                } else {
                    loc - ((1.0 - u) / (1.0 - p_left)).ln() / right_rate
                }
            }
            NoiseModel::Empirical(e) => e.centred[e.tilt.sample(rng)],
        }
    }

    /// Density of `B = W* - W` when it has closed form (Gaussian only).
    pub fn b_log_density(&self, b: f64) -> Result<f64> {
        match self {
            NoiseModel::Gaussian { sigma2 } => {
                let sd = (2.0 * sigma2).sqrt();
                Ok(norm_log_pdf((b + sigma2) / sd) - sd.ln())
            }
            other => Err(Error::UnsupportedNoise {
                operation: "closed-form density of B",
                kind: other.kind(),
            }),
        }
    }
}

fn laplace_params(sigma2: f64) -> (f64, f64) {
    ((1.0 - 0.5 * sigma2).ln(), (0.5 * sigma2).sqrt())
}

/// A draw of `B = W* - W` with its two components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDifferenceSample {
    pub b: f64,
    pub w_star: f64,
    pub w: f64,
}

/// `n` i.i.d. draws from `g*`.
pub fn sample_proposal_noise(model: &NoiseModel, rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| model.draw_proposal(rng)).collect()
}

/// `n` i.i.d. draws from the tilted stationary law.
pub fn sample_stationary_noise(model: &NoiseModel, rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| model.draw_stationary(rng)).collect()
}

/// `n` draws of `(W*, W)` with independent components and `b = w* - w`.
pub fn sample_noise_difference(
    model: &NoiseModel,
    rng: &mut impl Rng,
    n: usize,
) -> Vec<NoiseDifferenceSample> {
    (0..n)
        .map(|_| {
            let w = model.draw_stationary(rng);
            let w_star = model.draw_proposal(rng);
            NoiseDifferenceSample {
                b: w_star - w,
                w_star,
                w,
            }
        })
        .collect()
}

/// Both sides of `rho(b) = exp(-b) rho(-b)`.
pub fn b_density_ratio_check(model: &NoiseModel, b: f64) -> Result<(f64, f64)> {
    let lhs = model.b_log_density(b)?;
    let rhs = -b + model.b_log_density(-b)?;
    Ok((lhs.exp(), rhs.exp()))
}

/// JSON form `{"kind": ..., "sigma2": ..., "samples_path": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_path: Option<String>,
}

impl NoiseSpec {
    /// Builds the model; relative `samples_path` values resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<NoiseModel> {
        let sigma2 = || {
            self.sigma2
                .ok_or_else(|| invalid(format!("noise kind '{}' needs sigma2", self.kind)))
        };
        match self.kind.as_str() {
            "none" => Ok(NoiseModel::None),
            "gaussian" => NoiseModel::gaussian(sigma2()?),
            "laplace" => NoiseModel::laplace(sigma2()?),
            "empirical" => {
                let path = self
                    .samples_path
                    .as_ref()
                    .ok_or_else(|| invalid("empirical noise needs samples_path"))?;
                let samples = read_column_csv(&base.join(path))?;
                NoiseModel::empirical(samples)
            }
            other => Err(invalid(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// Reads a one-column CSV of reals. A non-numeric first row is treated as a
/// header; lines starting with `#` are skipped.
pub fn read_column_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(invalid(format!("{}: bad value '{field}'", path.display()))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stats::{mean, std_error, variance};
    use crate::rng::stream;

    fn exp_mean_z(draws: &[f64]) -> (f64, f64) {
        let e: Vec<f64> = draws.iter().map(|w| w.exp()).collect();
        (mean(&e), std_error(&e))
    }

    #[test]
    fn none_is_all_zero() {
        let mut rng = stream(1, 0);
        assert_eq!(
            sample_proposal_noise(&NoiseModel::None, &mut rng, 3),
            vec![0.0; 3]
        );
        assert_eq!(
            sample_stationary_noise(&NoiseModel::None, &mut rng, 5),
            vec![0.0; 5]
        );
        assert!(sample_noise_difference(&NoiseModel::None, &mut rng, 10)
            .iter()
            .all(|s| s.b == 0.0));
    }

    #[test]
    fn gaussian_proposal_noise_is_unbiased_in_density() {
        let model = NoiseModel::gaussian(4.0).unwrap();
        let draws = sample_proposal_noise(&model, &mut stream(11, 0), 1_000_000);
        let (m, se) = exp_mean_z(&draws);
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn laplace_location_and_variance() {
        let model = NoiseModel::laplace(1.0).unwrap();
        let draws = sample_proposal_noise(&model, &mut stream(12, 0), 1_000_000);
        let se = std_error(&draws);
        assert!((mean(&draws) - 0.5f64.ln()).abs() < 3.0 * se);
        assert!((variance(&draws) - 1.0).abs() < 0.01);
    }

    #[test]
    fn laplace_domain_is_enforced_at_construction() {
        assert!(NoiseModel::laplace(2.0).is_err());
        assert!(NoiseModel::laplace(0.0).is_err());
        assert!(NoiseModel::laplace(1.999).is_ok());
    }

    #[test]
    fn tilted_gaussian_mean() {
        let model = NoiseModel::gaussian(2.0).unwrap();
        let draws = sample_stationary_noise(&model, &mut stream(13, 0), 1_000_000);
        assert!((mean(&draws) - 1.0).abs() < 3.0 * std_error(&draws));
    }

    #[test]
    fn gaussian_difference_moments() {
        let s2 = 3.283;
        let model = NoiseModel::gaussian(s2).unwrap();
        let bs: Vec<f64> = sample_noise_difference(&model, &mut stream(14, 0), 1_000_000)
            .iter()
            .map(|s| s.b)
            .collect();
        let n = bs.len() as f64;
        let var = variance(&bs);
        assert!((mean(&bs) + s2).abs() < 3.0 * (var / n).sqrt());
        // se of a normal sample variance: var * sqrt(2 / (n - 1))
        assert!((var - 2.0 * s2).abs() < 3.0 * 2.0 * s2 * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn difference_components_are_consistent() {
        let model = NoiseModel::laplace(0.7).unwrap();
        for s in sample_noise_difference(&model, &mut stream(15, 0), 100) {
            assert_eq!(s.b, s.w_star - s.w);
        }
    }

    #[test]
    fn empirical_model_is_recentred_and_reproduces_gaussian_b() {
        let base = sample_proposal_noise(
            &NoiseModel::gaussian(1.0).unwrap(),
            &mut stream(16, 0),
            10_000,
        );
        let model = NoiseModel::empirical(base.iter().map(|w| w + 5.0).collect()).unwrap();
        if let NoiseModel::Empirical(e) = &model {
            assert!(log_mean_exp(e.centred()).abs() < 1e-12);
            assert_eq!(e.raw()[0], base[0] + 5.0);
        }
        let bs: Vec<f64> = sample_noise_difference(&model, &mut stream(17, 0), 1_000_000)
            .iter()
            .map(|s| s.b)
            .collect();
        // exact E[B] under the empirical law, which is itself within sampling
        // error of the Gaussian value -1
        let c = match &model {
            NoiseModel::Empirical(e) => e.centred().to_vec(),
            _ => unreachable!(),
        };
        let z: f64 = c.iter().map(|w| w.exp()).sum();
        let exact = mean(&c) - c.iter().map(|w| w * w.exp()).sum::<f64>() / z;
        assert!((mean(&bs) - exact).abs() < 3.0 * std_error(&bs));
        assert!((exact + 1.0).abs() < 0.06, "{exact}");
    }

    #[test]
    fn ratio_check_rejects_non_gaussian() {
        assert!(b_density_ratio_check(&NoiseModel::laplace(1.0).unwrap(), 0.3).is_err());
        assert!(b_density_ratio_check(&NoiseModel::None, 0.3).is_err());
    }

    #[test]
    fn seeded_streams_are_bitwise_reproducible() {
        let model = NoiseModel::laplace(1.2).unwrap();
        let a = sample_stationary_noise(&model, &mut stream(99, 3), 1000);
        let b = sample_stationary_noise(&model, &mut stream(99, 3), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn spec_round_trip_and_csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("w.csv"), "w_star\n-0.5\n0.1\n0.3\n").unwrap();
        let spec = NoiseSpec {
            kind: "empirical".into(),
            sigma2: None,
            samples_path: Some("w.csv".into()),
        };
        let model = spec.build(dir.path()).unwrap();
        match model {
            NoiseModel::Empirical(e) => assert_eq!(e.raw(), &[-0.5, 0.1, 0.3]),
            _ => panic!("expected empirical"),
        }
        let g = NoiseSpec {
            kind: "laplace".into(),
            sigma2: Some(2.5),
            samples_path: None,
        };
        assert!(g.build(dir.path()).is_err());
    }
}
