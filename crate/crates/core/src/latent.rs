//! Gaussian style-latent kernel: reparameterized sampling, KL to the
//! standard normal, KL weight schedules, the acoustic-model loss sum and
//! the speaking-rate coefficient.
//!
//! Everything here is a pure function. Noise is drawn from a generator that
//! is seeded per call.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Latent width used when nothing else is configured.
pub const DEFAULT_LATENT_DIM: usize = 8;

/// KL weight used for the whole of training.
pub const DEFAULT_KL_WEIGHT: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LatentError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("latent dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("invalid clamp bounds [{min}, {max}]")]
    InvalidClamp { min: f64, max: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("latent bank: {0}")]
    Bank(String),
}

/// Mean and log standard deviation of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
}

impl LatentSpec {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self, LatentError> {
        if mu.is_empty() {
            return Err(LatentError::ZeroDimension);
        }
        if mu.len() != log_sigma.len() {
            return Err(LatentError::DimensionMismatch {
                expected: mu.len(),
                actual: log_sigma.len(),
            });
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(LatentError::NonFinite("mu"));
        }
        if !log_sigma.iter().all(|v| v.is_finite()) {
            return Err(LatentError::NonFinite("log_sigma"));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.log_sigma
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }
}

/// `z = mu + noise * exp(log_sigma)`, elementwise.
pub fn reparameterize(spec: &LatentSpec, noise: &[f64]) -> Result<Vec<f64>, LatentError> {
    if noise.len() != spec.dim() {
        return Err(LatentError::DimensionMismatch {
            expected: spec.dim(),
            actual: noise.len(),
        });
    }
    Ok(spec
        .mu
        .iter()
        .zip(&spec.log_sigma)
        .zip(noise)
        .map(|((m, ls), e)| m + e * ls.exp())
        .collect())
}

/// `d` i.i.d. standard normal draws from a generator seeded with `seed`.
pub fn sample_noise(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_to_standard_normal(spec: &LatentSpec) -> Result<f64, LatentError> {
    let mut total = 0.0;
    for (m, ls) in spec.mu.iter().zip(&spec.log_sigma) {
        let var = (2.0 * ls).exp();
        total += m * m + var - 2.0 * ls - 1.0;
    }
    let kl = 0.5 * total;
    if !kl.is_finite() {
        return Err(LatentError::NonFinite("kl"));
    }
    // Rounding can leave a tiny negative residue when the spec is near N(0, I).
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnealingSchedule {
    Constant { beta: f64 },
    LinearRamp { beta_max: f64, ramp_steps: u64 },
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        AnnealingSchedule::Constant {
            beta: DEFAULT_KL_WEIGHT,
        }
    }
}

impl AnnealingSchedule {
    pub fn validate(&self) -> Result<(), LatentError> {
        match *self {
            AnnealingSchedule::Constant { beta } if !(beta.is_finite() && beta > 0.0) => {
                Err(LatentError::InvalidSchedule(format!("beta = {beta}")))
            }
            AnnealingSchedule::LinearRamp { beta_max, ramp_steps }
                if !(beta_max.is_finite() && beta_max > 0.0) || ramp_steps == 0 =>
            {
                Err(LatentError::InvalidSchedule(format!(
                    "beta_max = {beta_max}, ramp_steps = {ramp_steps}"
                )))
            }
            _ => Ok(()),
        }
    }
}

pub fn annealing_weight(step: u64, schedule: &AnnealingSchedule) -> f64 {
    match *schedule {
        AnnealingSchedule::Constant { beta } => beta,
        AnnealingSchedule::LinearRamp { beta_max, ramp_steps } => {
            beta_max * (step as f64 / ramp_steps as f64).min(1.0)
        }
    }
}

/// The four scalar terms of the acoustic model objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub dur: f64,
    pub vq: f64,
    pub pros: f64,
    pub kl: f64,
}

impl LossComponents {
    pub fn new(dur: f64, vq: f64, pros: f64, kl: f64) -> Result<Self, LatentError> {
        for (name, v) in [("dur", dur), ("vq", vq), ("pros", pros), ("kl", kl)] {
            if !v.is_finite() {
                return Err(LatentError::NonFinite(name));
            }
            if v < 0.0 {
                return Err(LatentError::NonPositive { name, value: v });
            }
        }
        Ok(Self { dur, vq, pros, kl })
    }
}

/// `dur + vq + pros + beta * kl`.
pub fn total_loss(c: &LossComponents, beta: f64) -> f64 {
    c.dur + c.vq + c.pros + beta * c.kl
}

/// Ratio of the reference's mean phone duration to the corpus mean.
pub fn duration_scale(reference_mean: f64, corpus_mean: f64) -> Result<f64, LatentError> {
    for (name, v) in [("reference_mean", reference_mean), ("corpus_mean", corpus_mean)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(LatentError::NonPositive { name, value: v });
        }
    }
    Ok(reference_mean / corpus_mean)
}

/// Bounds applied to the duration coefficient before it is sent out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationClamp {
    pub min: f64,
    pub max: f64,
}

impl Default for DurationClamp {
    fn default() -> Self {
        Self { min: 0.25, max: 4.0 }
    }
}

impl DurationClamp {
    pub fn new(min: f64, max: f64) -> Result<Self, LatentError> {
        if !(min.is_finite() && max.is_finite() && min > 0.0 && min <= max) {
            return Err(LatentError::InvalidClamp { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, scale: f64) -> f64 {
        scale.clamp(self.min, self.max)
    }

    pub fn contains(&self, scale: f64) -> bool {
        scale >= self.min && scale <= self.max
    }
}

/// Precomputed `(mu, log_sigma)` per reference utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBank {
    dim: usize,
    specs: BTreeMap<String, LatentSpec>,
}

impl LatentBank {
    pub fn new(specs: BTreeMap<String, LatentSpec>) -> Result<Self, LatentError> {
        let dim = specs
            .values()
            .next()
            .map(LatentSpec::dim)
            .ok_or_else(|| LatentError::Bank("bank has no entries".into()))?;
        if let Some((id, spec)) = specs.iter().find(|(_, s)| s.dim() != dim) {
            return Err(LatentError::Bank(format!(
                "reference {id:?} has dimension {}, expected {dim}",
                spec.dim()
            )));
        }
        Ok(Self { dim, specs })
    }

    pub fn from_json(text: &str) -> Result<Self, LatentError> {
        #[derive(Deserialize)]
        struct Raw {
            mu: Vec<f64>,
            log_sigma: Vec<f64>,
        }
        let raw: BTreeMap<String, Raw> =
            serde_json::from_str(text).map_err(|e| LatentError::Bank(e.to_string()))?;
        let mut specs = BTreeMap::new();
        for (id, r) in raw {
            let spec = LatentSpec::new(r.mu, r.log_sigma)
                .map_err(|e| LatentError::Bank(format!("reference {id:?}: {e}")))?;
            specs.insert(id, spec);
        }
        Self::new(specs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.specs).expect("bank serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, reference_id: &str) -> Option<&LatentSpec> {
        self.specs.get(reference_id)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("failed to read latent bank {path}: {source}")]
pub struct BankReadError {
    pub path: PathBuf,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

pub fn load_latent_bank(path: impl AsRef<Path>) -> Result<LatentBank, BankReadError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| BankReadError {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    LatentBank::from_json(&text).map_err(|e| BankReadError {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}
