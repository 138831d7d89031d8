use serde::{Deserialize, Serialize};

use super::weibull::WeibullParams;
use crate::error::{Error, Result};

/// Time budget and overheads the checkpoint interval trades off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// Total computation time T.
    pub total_time: f64,
    /// Time to restore after a failure, t_r.
    pub recovery_time: f64,
    /// Time to write one checkpoint, c_w.
    pub write_cost: f64,
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return Err(Error::invalid("total_time must be > 0"));
        }
        if !(self.recovery_time.is_finite() && self.recovery_time >= 0.0) {
            return Err(Error::invalid("recovery_time must be >= 0"));
        }
        if !(self.write_cost.is_finite() && self.write_cost > 0.0) {
            return Err(Error::invalid("write_cost must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    /// Simulated seconds between checkpoints.
    pub interval: f64,
    pub enabled: bool,
}

impl CheckpointPolicy {
    pub fn disabled() -> Self {
        Self {
            interval: f64::INFINITY,
            enabled: false,
        }
    }

    pub fn every(interval: f64) -> Result<Self> {
        if !(interval > 0.0) {
            return Err(Error::invalid(format!("checkpoint interval must be > 0, got {interval}")));
        }
        Ok(Self {
            interval,
            enabled: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModel {
    /// `t_c/T + p_f(t_c) · t_r/T`.
    Paper,
    /// `(c_w + p_f(t_c) · (t_c/2 + t_r)) / t_c`.
    Amortized,
}

impl std::str::FromStr for CostModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(CostModel::Paper),
            "amortized" => Ok(CostModel::Amortized),
            other => Err(Error::invalid(format!(
                "unknown cost model `{other}` (expected paper or amortized)"
            ))),
        }
    }
}

/// Overhead of checkpointing every `t_c` plus expected recovery, both as
/// fractions of the total time.
pub fn checkpoint_cost_paper(t_c: f64, cost: &CostModelParams, weibull: &WeibullParams) -> f64 {
    t_c / cost.total_time + weibull.cdf(t_c) * cost.recovery_time / cost.total_time
}

/// Expected overhead per unit of useful work for interval `t_c`: one write,
/// plus with probability `p_f(t_c)` a recovery and the rework of half an
/// interval on average.
pub fn checkpoint_cost_amortized(t_c: f64, cost: &CostModelParams, weibull: &WeibullParams) -> f64 {
    (cost.write_cost + weibull.cdf(t_c) * (t_c / 2.0 + cost.recovery_time)) / t_c
}

pub fn checkpoint_cost(
    model: CostModel,
    t_c: f64,
    cost: &CostModelParams,
    weibull: &WeibullParams,
) -> f64 {
    match model {
        CostModel::Paper => checkpoint_cost_paper(t_c, cost, weibull),
        CostModel::Amortized => checkpoint_cost_amortized(t_c, cost, weibull),
    }
}

/// Result of [`optimal_checkpoint_interval`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSolution {
    pub policy: CheckpointPolicy,
    pub cost: f64,
    /// Set when the objective has no interior stationary point, so the
    /// optimum is pinned to the lower end of the domain.
    pub warning: Option<String>,
}

const PRESCAN_POINTS: usize = 1024;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimize the chosen cost over `[t_min, t_max]`.
///
/// A uniform prescan locates the best cell, golden-section search refines
/// it to `1e-6 · (t_max - t_min)`, and the endpoints are kept when they
/// are no worse than the refined point.
///
/// The [`CostModel::Paper`] derivative `1/T + p_f'(t_c) · t_r/T` is positive for
/// every `t_c`, so its minimum is always `t_min`; the solution carries a
/// warning saying so.
pub fn optimal_checkpoint_interval(
    cost: &CostModelParams,
    weibull: &WeibullParams,
    model: CostModel,
    domain: (f64, f64),
) -> Result<IntervalSolution> {
    cost.validate()?;
    weibull.validate()?;
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi <= cost.total_time) {
        return Err(Error::invalid(format!(
            "domain [{lo}, {hi}] must satisfy 0 < t_min < t_max <= T = {}",
            cost.total_time
        )));
    }
    let f = |t: f64| checkpoint_cost(model, t, cost, weibull);

    let step = (hi - lo) / (PRESCAN_POINTS - 1) as f64;
    let grid = |i: usize| if i == PRESCAN_POINTS - 1 { hi } else { lo + step * i as f64 };
    let best = (0..PRESCAN_POINTS)
        .map(|i| (i, f(grid(i))))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut a = grid(best.0.saturating_sub(1));
    let mut b = grid((best.0 + 1).min(PRESCAN_POINTS - 1));

    let tol = 1e-6 * (hi - lo);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut t_star = mid;
    let mut c_star = f(mid);
    for end in [lo, hi] {
        let v = f(end);
        if v <= c_star && !(v == c_star && end > t_star) {
            t_star = end;
            c_star = v;
        }
    }

    let warning = match model {
        CostModel::Paper => Some(format!(
            "paper cost model is strictly increasing in t_c (dC/dt_c = 1/T + p_f'(t_c)*t_r/T > 0); \
             no interior optimum, returning t_min = {lo}"
        )),
        CostModel::Amortized => None,
    };
    Ok(IntervalSolution {
        policy: CheckpointPolicy::every(t_star)?,
        cost: c_star,
        warning,
    })
}

/// Analytic derivative of the [`CostModel::Paper`] cost.
#[cfg(test)]
pub(crate) fn paper_cost_derivative(t_c: f64, cost: &CostModelParams, weibull: &WeibullParams) -> f64 {
    1.0 / cost.total_time + weibull.pdf(t_c) * cost.recovery_time / cost.total_time
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(t: f64, tr: f64, cw: f64) -> CostModelParams {
        CostModelParams {
            total_time: t,
            recovery_time: tr,
            write_cost: cw,
        }
    }

    #[test]
    fn paper_examples() {
        let w = WeibullParams::new(1.0, 1.0).unwrap();
        let c = params(10.0, 2.0, 0.1);
        let v = checkpoint_cost_paper(1.0, &c, &w);
        assert!((v - (0.1 + (1.0 - (-1.0f64).exp()) * 0.2)).abs() < 1e-15);
        assert!((v - 0.226424).abs() < 1e-6);
        assert!(checkpoint_cost_paper(1e-12, &c, &w) < 1e-11);
        let w2 = WeibullParams::new(3.0, 2.0).unwrap();
        let c2 = params(10.0, 0.0, 0.1);
        assert!((checkpoint_cost_paper(3.0, &c2, &w2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn amortized_examples() {
        let w = WeibullParams::new(10.0, 1.0).unwrap();
        let c = params(100.0, 1.0, 0.1);
        let v = checkpoint_cost_amortized(1.0, &c, &w);
        assert!((v - (0.1 + (1.0 - (-0.1f64).exp()) * 1.5)).abs() < 1e-15);
        assert!((v - 0.24274).abs() < 1e-5);
    }

    #[test]
    fn amortized_without_failures_is_write_cost_rate() {
        let w = WeibullParams::new(1e300, 1.0).unwrap();
        let c = params(100.0, 1.0, 0.5);
        let a = checkpoint_cost_amortized(1.0, &c, &w);
        let b = checkpoint_cost_amortized(2.0, &c, &w);
        assert!((a - 0.5).abs() < 1e-12);
        assert!(b < a);
    }

    #[test]
    fn amortized_is_scale_free() {
        let w = WeibullParams::new(10.0, 1.7).unwrap();
        let c = params(100.0, 1.0, 0.1);
        let s = 3.5;
        let ws = WeibullParams::new(35.0, 1.7).unwrap();
        let cs = params(100.0, 3.5, 0.35);
        let a = checkpoint_cost_amortized(2.0, &c, &w);
        let b = checkpoint_cost_amortized(2.0 * s, &cs, &ws);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn paper_model_pins_lower_bound() {
        let w = WeibullParams::new(5.0, 2.0).unwrap();
        let c = params(100.0, 3.0, 0.1);
        let sol = optimal_checkpoint_interval(&c, &w, CostModel::Paper, (0.5, 50.0)).unwrap();
        assert_eq!(sol.policy.interval, 0.5);
        assert!(sol.warning.is_some());
        assert!(paper_cost_derivative(1.0, &c, &w) > 0.0);
    }

    #[test]
    fn amortized_with_free_overheads_pins_lower_bound() {
        let w = WeibullParams::new(10.0, 1.0).unwrap();
        let c = params(100.0, 0.0, 1e-12);
        let sol = optimal_checkpoint_interval(&c, &w, CostModel::Amortized, (0.01, 50.0)).unwrap();
        assert!((sol.policy.interval - 0.01).abs() < 1e-3, "{}", sol.policy.interval);
        assert!(sol.warning.is_none());
    }

    #[test]
    fn invalid_domain() {
        let w = WeibullParams::new(10.0, 1.0).unwrap();
        let c = params(100.0, 1.0, 0.1);
        for dom in [(0.0, 1.0), (2.0, 1.0), (1.0, 1.0), (1.0, 200.0), (-1.0, 5.0)] {
            assert!(optimal_checkpoint_interval(&c, &w, CostModel::Amortized, dom).is_err());
        }
    }
}
