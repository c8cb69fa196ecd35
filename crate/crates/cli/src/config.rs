use anyhow::{bail, Context, Result};
use psmrwm::limit::NoiseFamily;
use psmrwm::study::{PilotConfig, StudyConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Reads `path` and overlays it on `base`. The file may be a plain config, a
/// run manifest or a `{seed, config_hash, result}` output wrapping a config.
/// Unknown keys are rejected.
pub fn load<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let mut value = serde_json::to_value(&base)?;
    if let Some(p) = path {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let mut user: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if let Some(inner) = user.get("manifest_version").and(user.get("config")) {
            user = inner.clone();
        } else if let Some(inner) = user.get("config_hash").and(user.get("result")) {
            user = inner.clone();
        }
        overlay(&mut value, user, "")?;
    }
    Ok(serde_json::from_value(value)?)
}

fn overlay(base: &mut Value, user: Value, at: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let path = format!("{at}/{k}");
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v, &path)?,
                    Some(slot) => *slot = v,
                    None => bail!("unknown config key {path}"),
                }
            }
            Ok(())
        }
        (b, u) => {
            *b = u;
            Ok(())
        }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical JSON form.
pub fn hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Range {
    pub fn points(&self) -> Vec<f64> {
        psmrwm::limit::linspace(self.lo, self.hi, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryGridConfig {
    pub families: Vec<NoiseFamily>,
    pub ell: Range,
    /// Noise standard deviations; the first row at 0 is the exact-target curve.
    pub sigma: Range,
    pub mc_budget: usize,
}

impl Default for TheoryGridConfig {
    fn default() -> Self {
        Self {
            families: vec![NoiseFamily::Gaussian, NoiseFamily::Laplace],
            ell: Range {
                lo: 0.1,
                hi: 6.0,
                n: 60,
            },
            sigma: Range {
                lo: 0.0,
                hi: 3.0,
                n: 31,
            },
            mc_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub tol: f64,
    /// Noise variances at which to report the conditional optimum of ell.
    pub sigma2: Vec<f64>,
    /// Scalings at which to report the conditional optimum of sigma2.
    pub ell: Vec<f64>,
    /// Cost ratios for the overhead-adjusted optimum.
    pub t_rat: Vec<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            sigma2: vec![0.0, 1.0, 3.283],
            ell: vec![1.0, 2.562, 4.0],
            t_rat: vec![1e-6, 1.0, 1e6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDConfig {
    pub dims: Vec<usize>,
    pub tol: f64,
}

impl Default for FiniteDConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 3, 5, 10],
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvSimulateConfig {
    pub x: [f64; 5],
    pub u0: [u64; 2],
    pub t_max: f64,
    pub dt: f64,
}

impl Default for LvSimulateConfig {
    fn default() -> Self {
        Self {
            x: psmrwm::filter::LvParams::reference().x,
            u0: [70, 70],
            t_max: 50.0,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PilotCommandConfig {
    pub study: StudyConfig,
    pub pilot: PilotConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInput {
    pub m: usize,
    /// Single-column CSV of log-likelihood estimates at a fixed point.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub noise: Vec<NoiseInput>,
    /// Optional single-column CSV of log-target estimates along a chain.
    pub l_hat: Option<String>,
    pub t_grid: Vec<f64>,
    pub shift: f64,
    pub bootstrap: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            noise: Vec::new(),
            l_hat: None,
            t_grid: psmrwm::diagnostics::default_t_grid(),
            shift: 0.0,
            bootstrap: psmrwm::diagnostics::DEFAULT_BOOTSTRAP_RESAMPLES,
        }
    }
}
