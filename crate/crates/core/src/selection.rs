//! Client selection: utility scores, availability, top-K choice, the
//! accuracy/cost objective and the adaptive-K schedule.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientProfile;
use crate::error::{Error, Result};
use crate::model::TrainStats;
use crate::rng::{self, Purpose};

/// Minimum accuracy gain that counts as progress for [`adapt_k`].
pub const ADAPT_MIN_GAIN: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityComponents {
    /// `(initial_loss - final_loss) / initial_loss` of the latest local pass.
    pub loss_improvement: f64,
    /// Share of all training rows held by the client.
    pub data_fraction: f64,
    /// Compute capacity min-max normalized across the federation.
    pub capacity_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub client_id: u32,
    pub value: f64,
    pub components: UtilityComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Top-K by utility score.
    #[default]
    Utility,
    /// K clients uniformly at random from the available set.
    Random,
    /// Every available client.
    Full,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utility" => Ok(Self::Utility),
            "random" => Ok(Self::Random),
            "full" => Ok(Self::Full),
            other => Err(Error::invalid(format!(
                "unknown selection strategy `{other}` (expected utility, random or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    /// Weight of accuracy in the objective.
    pub alpha: f64,
    /// Weight of cost in the objective.
    pub gamma: f64,
    pub adaptive: bool,
    pub k_min: usize,
    pub k_max: usize,
    /// Rounds without a gain of at least [`ADAPT_MIN_GAIN`] before K grows.
    pub patience: usize,
    /// Weights of (loss improvement, data fraction, capacity); sum to 1.
    pub utility_weights: [f64; 3],
    pub ema_decay: f64,
    pub strategy: SelectionStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 1.0,
            gamma: 0.01,
            adaptive: false,
            k_min: 1,
            k_max: 10,
            patience: 5,
            utility_weights: [0.5, 0.3, 0.2],
            ema_decay: 0.5,
            strategy: SelectionStrategy::Utility,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("selection.k must be >= 1"));
        }
        if !(self.k_min <= self.k && self.k <= self.k_max && self.k_max <= n_clients) {
            return Err(Error::invalid(format!(
                "need k_min <= k <= k_max <= N, got {} <= {} <= {} <= {}",
                self.k_min, self.k, self.k_max, n_clients
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid("alpha and gamma must be nonnegative reals"));
        }
        let w = self.utility_weights;
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "utility weights must be nonnegative and sum to 1, got {w:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema_decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-client capacity min-max normalized to [0, 1]. A federation with a
/// single capacity value maps everyone to 1.
pub fn capacity_norms(profiles: &[ClientProfile]) -> Vec<f64> {
    let lo = profiles.iter().map(|p| p.compute_capacity).fold(f64::INFINITY, f64::min);
    let hi = profiles.iter().map(|p| p.compute_capacity).fold(f64::NEG_INFINITY, f64::max);
    profiles
        .iter()
        .map(|p| {
            if hi > lo {
                (p.compute_capacity - lo) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}

fn weighted(c: &UtilityComponents, w: [f64; 3]) -> f64 {
    w[0] * c.loss_improvement + w[1] * c.data_fraction + w[2] * c.capacity_norm
}

/// Starting scores. Loss improvement is unknown before a client has
/// trained, so it starts at its ceiling of 1; clients are therefore tried
/// at least once before ones with measured low improvement are preferred.
pub fn initial_utilities(
    data_fractions: &[f64],
    capacity_norms: &[f64],
    cfg: &SelectionConfig,
) -> Vec<UtilityScore> {
    data_fractions
        .iter()
        .zip(capacity_norms)
        .enumerate()
        .map(|(i, (&df, &cap))| {
            let components = UtilityComponents {
                loss_improvement: 1.0,
                data_fraction: df,
                capacity_norm: cap,
            };
            UtilityScore {
                client_id: i as u32,
                value: weighted(&components, cfg.utility_weights),
                components,
            }
        })
        .collect()
}

/// EMA update of a client's score after it trained:
/// `value = ema·prev + (1-ema)·(β1·loss_improvement + β2·data_fraction + β3·capacity_norm)`.
pub fn compute_utility(
    prev: &UtilityScore,
    stats: &TrainStats,
    data_fraction: f64,
    capacity_norm: f64,
    cfg: &SelectionConfig,
) -> UtilityScore {
    let loss_improvement = if stats.initial_loss > 0.0 && stats.initial_loss.is_finite() {
        (stats.initial_loss - stats.final_loss) / stats.initial_loss
    } else {
        0.0
    };
    let components = UtilityComponents {
        loss_improvement,
        data_fraction,
        capacity_norm,
    };
    let raw = weighted(&components, cfg.utility_weights);
    UtilityScore {
        client_id: prev.client_id,
        value: cfg.ema_decay * prev.value + (1.0 - cfg.ema_decay) * raw,
        components,
    }
}

/// Clients online this round: each independently with its availability
/// probability, from the stream keyed by `(rng_seed, round)`.
pub fn get_available_clients(profiles: &[ClientProfile], round: u32, rng_seed: u64) -> BTreeSet<u32> {
    let mut rng = rng::stream(rng_seed, Purpose::Availability, &[u64::from(round)]);
    profiles
        .iter()
        .filter(|p| {
            let u: f64 = rng.random();
            u < p.availability_prob
        })
        .map(|p| p.client_id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSelection {
    pub round: u32,
    /// Ascending client ids.
    pub selected: Vec<u32>,
    pub objective_value: f64,
}

/// The `min(k, |available|)` available clients with the highest utility,
/// ties broken by ascending id. `objective_value` is left at 0 until the
/// round has been evaluated.
pub fn select_top_k(
    round: u32,
    available: &BTreeSet<u32>,
    utilities: &[UtilityScore],
    k: usize,
) -> Result<RoundSelection> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if available.is_empty() {
        return Err(Error::NoClients);
    }
    let mut ranked: Vec<(f64, u32)> = available
        .iter()
        .map(|&id| {
            utilities
                .iter()
                .find(|u| u.client_id == id)
                .map(|u| (u.value, id))
                .ok_or_else(|| Error::invalid(format!("no utility for client {id}")))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut selected: Vec<u32> = ranked.into_iter().take(k).map(|(_, id)| id).collect();
    selected.sort_unstable();
    Ok(RoundSelection {
        round,
        selected,
        objective_value: 0.0,
    })
}

/// `min(k, |available|)` clients uniformly without replacement.
pub fn select_random(
    round: u32,
    available: &BTreeSet<u32>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RoundSelection> {
    if available.is_empty() {
        return Err(Error::NoClients);
    }
    let pool: Vec<u32> = available.iter().copied().collect();
    let take = k.min(pool.len());
    let mut selected: Vec<u32> = index::sample(rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    selected.sort_unstable();
    Ok(RoundSelection {
        round,
        selected,
        objective_value: 0.0,
    })
}

/// `Σ (comm_cost + comp_cost)` over the selected clients.
pub fn compute_cost(selected: &[u32], profiles: &[ClientProfile]) -> Result<f64> {
    selected.iter().try_fold(0.0, |acc, &id| {
        let p = profiles
            .iter()
            .find(|p| p.client_id == id)
            .ok_or_else(|| Error::invalid(format!("unknown client id {id}")))?;
        Ok(acc + p.comm_cost + p.comp_cost)
    })
}

/// `α · accuracy − γ · cost`.
pub fn compute_objective(accuracy: f64, cost: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * accuracy - gamma * cost
}

/// Gain of the best value in the last `window` entries over the best value
/// before them (over the first entry when the window spans the whole
/// history). `None` while the history is shorter than the window.
pub fn window_gain(history: &[f64], window: usize) -> Option<f64> {
    if window == 0 || history.len() < window {
        return None;
    }
    let start = history.len() - window;
    let before = if start == 0 {
        history[0]
    } else {
        history[..start].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let best = history[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(best - before)
}

/// Grow K by one (up to `k_max`) when accuracy has stalled for `patience`
/// rounds. `history` should hold only rounds since K last changed.
pub fn adapt_k(history: &[f64], cfg: &SelectionConfig, current_k: usize) -> usize {
    if !cfg.adaptive {
        return current_k;
    }
    match window_gain(history, cfg.patience) {
        Some(gain) if gain < ADAPT_MIN_GAIN => (current_k + 1).clamp(cfg.k_min, cfg.k_max),
        _ => current_k.clamp(cfg.k_min, cfg.k_max),
    }
}
