use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Smallest sample accepted by [`fit_weibull`].
pub const MIN_FIT_SAMPLES: usize = 10;

const FIT_MAX_ITER: usize = 200;
const FIT_REL_TOL: f64 = 1e-8;
const FIT_MAX_SHAPE: f64 = 1e6;

/// Two-parameter Weibull distribution, times in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub scale_lambda: f64,
    pub shape_k: f64,
}

impl WeibullParams {
    pub fn new(scale_lambda: f64, shape_k: f64) -> Result<Self> {
        let p = Self {
            scale_lambda,
            shape_k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_lambda.is_finite() && self.scale_lambda > 0.0) {
            return Err(Error::invalid(format!("weibull scale must be > 0, got {}", self.scale_lambda)));
        }
        if !(self.shape_k.is_finite() && self.shape_k > 0.0) {
            return Err(Error::invalid(format!("weibull shape must be > 0, got {}", self.shape_k)));
        }
        Ok(())
    }

    /// Scale that puts probability `p` of failing before `horizon`.
    pub fn scale_for_failure_prob(horizon: f64, p: f64, shape_k: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) || !(horizon > 0.0) {
            return Err(Error::invalid("need horizon > 0 and p in (0, 1)"));
        }
        Self::new(horizon / (-(1.0 - p).ln()).powf(1.0 / shape_k), shape_k)
    }

    pub(crate) fn cdf(&self, t: f64) -> f64 {
        -(-(t / self.scale_lambda).powf(self.shape_k)).exp_m1()
    }

    /// Density of the CDF, `dp_f/dt`.
    #[cfg(test)]
    pub(crate) fn pdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return if self.shape_k < 1.0 {
                f64::INFINITY
            } else if self.shape_k == 1.0 {
                1.0 / self.scale_lambda
            } else {
                0.0
            };
        }
        let r = t / self.scale_lambda;
        (self.shape_k / self.scale_lambda) * r.powf(self.shape_k - 1.0) * (-r.powf(self.shape_k)).exp()
    }
}

/// Probability of a failure within an interval of length `t_c`:
/// `1 - exp(-(t_c/λ)^k)`.
pub fn weibull_failure_prob(t_c: f64, params: &WeibullParams) -> Result<f64> {
    params.validate()?;
    if !(t_c >= 0.0) {
        return Err(Error::invalid(format!("interval must be >= 0, got {t_c}")));
    }
    Ok(params.cdf(t_c))
}

/// Inverse CDF: `λ · (-ln(1-u))^(1/k)`.
pub fn weibull_quantile(u: f64, params: &WeibullParams) -> f64 {
    params.scale_lambda * (-(-u).ln_1p()).powf(1.0 / params.shape_k)
}

/// Inverse-CDF draw from the stream seeded by `rng_seed`.
pub fn sample_failure_time(params: &WeibullParams, rng_seed: u64) -> f64 {
    sample_failure_time_from(params, &mut rng::stream(rng_seed, Purpose::Failure, &[]))
}

/// Inverse-CDF draw from a caller-owned stream. `u` is drawn from the open
/// unit interval so the result is always positive and finite.
pub fn sample_failure_time_from(params: &WeibullParams, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.sample(Open01);
    weibull_quantile(u, params)
}

/// Maximum-likelihood Weibull fit.
///
/// Solves the profile score equation in the shape `k`
///
/// ```text
/// 1/k + mean(ln t) - Σ t^k ln t / Σ t^k = 0
/// ```
///
/// by safeguarded Newton iteration (the left side is strictly decreasing in
/// `k`), then sets `λ = (mean t^k)^(1/k)`. Times are rescaled by their
/// maximum first so `t^k` stays in `(0, 1]`.
pub fn fit_weibull(failure_times: &[f64]) -> Result<WeibullParams> {
    let n = failure_times.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_SAMPLES,
            got: n,
        });
    }
    if let Some(bad) = failure_times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::invalid(format!("failure times must be positive and finite, got {bad}")));
    }
    let t_max = failure_times.iter().copied().fold(0.0_f64, f64::max);
    let logs: Vec<f64> = failure_times.iter().map(|t| (t / t_max).ln()).collect();
    let nf = n as f64;
    let mean_log = logs.iter().sum::<f64>() / nf;
    let var_log = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / nf;
    if !(var_log > 0.0) {
        return Err(Error::Numeric(
            "failure times have no spread; shape estimate diverges".into(),
        ));
    }

    // moment estimate on the log scale as the starting point
    let mut k = std::f64::consts::PI / (6.0 * var_log).sqrt();
    for _ in 0..FIT_MAX_ITER {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let score = 1.0 / k + mean_log - s1 / s0;
        let slope = -1.0 / (k * k) - (s2 * s0 - s1 * s1) / (s0 * s0);
        if !(score.is_finite() && slope.is_finite()) || slope >= 0.0 {
            return Err(Error::Numeric(format!("profile likelihood degenerate at k = {k}")));
        }
        let mut next = k - score / slope;
        if next <= 0.0 {
            next = k / 2.0;
        }
        if !next.is_finite() || next > FIT_MAX_SHAPE {
            return Err(Error::Numeric(format!("shape estimate diverged past {FIT_MAX_SHAPE}")));
        }
        let converged = ((next - k) / k).abs() < FIT_REL_TOL;
        k = next;
        if converged {
            let mean_pow = logs.iter().map(|&l| (k * l).exp()).sum::<f64>() / nf;
            let lambda = t_max * mean_pow.powf(1.0 / k);
            return WeibullParams::new(lambda, k)
                .map_err(|e| Error::Numeric(format!("fit produced invalid parameters: {e}")));
        }
    }
    Err(Error::Numeric(format!(
        "shape iteration did not converge in {FIT_MAX_ITER} steps"
    )))
}
