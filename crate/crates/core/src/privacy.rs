//! Gaussian mechanism on client updates.
//!
//! An update is first clipped to L2 norm `clip_norm`, which bounds the
//! sensitivity to `clip_norm`, then each coordinate receives independent
//! N(0, σ²) noise with
//!
//! ```text
//! σ = Δ · sqrt(2 · ln(1.25 / δ)) / ε
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Gradient;
use crate::rng::{self, Purpose};

/// An (ε, δ) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = Self { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale {
    pub sigma: f64,
    pub clip_norm: f64,
}

/// Where noise enters local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Clip and noise the parameter delta once, after local training.
    #[default]
    PerRound,
    /// Clip and noise every mini-batch gradient before its step.
    PerStep,
}

/// Privacy settings of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub enabled: bool,
    pub budget: PrivacyBudget,
    pub clip_norm: f64,
    pub mode: NoiseMode,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            budget: PrivacyBudget {
                epsilon: 1.0,
                delta: 1e-5,
            },
            clip_norm: 1.0,
            mode: NoiseMode::PerRound,
        }
    }
}

impl DpConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        Ok(())
    }

    pub fn noise_scale(&self) -> Result<NoiseScale> {
        calibrate_sigma(&self.budget, self.clip_norm)
    }
}

/// Noise scale of the classic Gaussian mechanism for `budget` and L2
/// sensitivity `sensitivity`. The sensitivity becomes the clip norm.
pub fn calibrate_sigma(budget: &PrivacyBudget, sensitivity: f64) -> Result<NoiseScale> {
    budget.validate()?;
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(Error::invalid(format!("sensitivity must be > 0, got {sensitivity}")));
    }
    let sigma = sensitivity * (2.0 * (1.25 / budget.delta).ln()).sqrt() / budget.epsilon;
    Ok(NoiseScale {
        sigma,
        clip_norm: sensitivity,
    })
}

/// Scale `update` down to L2 norm `clip_norm` if it is longer.
pub fn clip_update(update: &Gradient, clip_norm: f64) -> Gradient {
    let norm = update.norm();
    if norm <= clip_norm {
        return update.clone();
    }
    let scale = clip_norm / norm;
    Gradient(update.0.iter().map(|v| v * scale).collect())
}

/// Add N(0, σ²) to every coordinate using the stream seeded by `rng_seed`.
/// Coordinate `i` always receives the `i`-th normal draw of that stream.
pub fn add_gaussian_noise(update: &Gradient, scale: &NoiseScale, rng_seed: u64) -> Gradient {
    let mut rng = rng::stream(rng_seed, Purpose::Noise, &[]);
    add_gaussian_noise_from(update, scale.sigma, &mut rng)
}

/// [`add_gaussian_noise`] drawing from a caller-owned stream.
pub fn add_gaussian_noise_from(update: &Gradient, sigma: f64, rng: &mut ChaCha8Rng) -> Gradient {
    if sigma == 0.0 {
        return update.clone();
    }
    Gradient(
        update
            .0
            .iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + sigma * z
            })
            .collect(),
    )
}

/// Basic sequential composition over `rounds` releases.
pub fn sequential_budget(per_round: &PrivacyBudget, rounds: u32) -> Result<PrivacyBudget> {
    per_round.validate()?;
    if rounds == 0 {
        return Err(Error::invalid("rounds must be >= 1"));
    }
    let epsilon = per_round.epsilon * f64::from(rounds);
    let delta = per_round.delta * f64::from(rounds);
    if delta >= 1.0 {
        return Err(Error::BudgetExhausted { epsilon, delta });
    }
    Ok(PrivacyBudget { epsilon, delta })
}
