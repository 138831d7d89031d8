//! Classification metrics and the Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::orchestrator::RunReport;

/// Above this `n_a · n_b` the U test switches to the normal approximation.
pub const EXACT_MAX_PRODUCT: usize = 400;

/// Fraction of rows where `score >= threshold` agrees with the label.
pub fn accuracy(labels: &[u8], scores: &[f64], threshold: f64) -> Result<f64> {
    if labels.is_empty() || labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "accuracy needs equal non-empty inputs, got {} labels and {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let hits = labels
        .iter()
        .zip(scores)
        .filter(|(&y, &s)| (s >= threshold) == (y == 1))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    doubled_midranks(values).into_iter().map(|r| r as f64 / 2.0).collect()
}

/// Twice the midranks, which are always integers.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups among `values`.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

/// Probability that a random positive scores above a random negative,
/// counting ties as one half.
pub fn auc_roc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("labels and scores differ in length"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC-ROC needs both classes present".into(),
        ));
    }
    let ranks = doubled_midranks(scores);
    let pos_sum: u64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let doubled_u = pos_sum as f64 - (n_pos * (n_pos + 1)) as f64;
    Ok(doubled_u / 2.0 / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Sample A tends to be larger.
    Greater,
    /// Sample A tends to be smaller.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U of sample A: the number of (a, b) pairs with a > b, ties counting ½.
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: UMethod,
    pub n_a: usize,
    pub n_b: usize,
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64]) -> Result<UTestResult> {
    mann_whitney_u_with(sample_a, sample_b, Alternative::TwoSided)
}

/// Mann-Whitney U test with midrank ties.
///
/// When `n_a · n_b <= 400` the p-value comes from the exact permutation
/// distribution of the (midrank) rank sum, counted by dynamic programming
/// over all `C(n_a + n_b, n_a)` labelings. Larger samples use the normal
/// approximation with tie-corrected variance and a continuity correction.
pub fn mann_whitney_u_with(
    sample_a: &[f64],
    sample_b: &[f64],
    alternative: Alternative,
) -> Result<UTestResult> {
    u_test(sample_a, sample_b, alternative, false)
}

/// The normal approximation regardless of sample size.
pub fn mann_whitney_u_normal(
    sample_a: &[f64],
    sample_b: &[f64],
    alternative: Alternative,
) -> Result<UTestResult> {
    u_test(sample_a, sample_b, alternative, true)
}

fn u_test(
    sample_a: &[f64],
    sample_b: &[f64],
    alternative: Alternative,
    force_normal: bool,
) -> Result<UTestResult> {
    let (n_a, n_b) = (sample_a.len(), sample_b.len());
    if n_a == 0 || n_b == 0 {
        return Err(Error::invalid("both samples must be non-empty"));
    }
    if sample_a.iter().chain(sample_b).any(|v| v.is_nan()) {
        return Err(Error::invalid("samples contain NaN"));
    }
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let rank_sum_a: u64 = ranks[..n_a].iter().sum();
    // doubled U keeps half-integers exact
    let doubled_u = rank_sum_a as i64 - (n_a * (n_a + 1)) as i64;
    let u = doubled_u as f64 / 2.0;

    let (p_value, method) = if n_a * n_b <= EXACT_MAX_PRODUCT && !force_normal {
        (exact_p(&ranks, n_a, n_b, doubled_u, alternative), UMethod::Exact)
    } else {
        (normal_p(&pooled, n_a, n_b, u, alternative), UMethod::NormalApprox)
    };
    Ok(UTestResult {
        u_statistic: u,
        p_value: p_value.clamp(0.0, 1.0),
        method,
        n_a,
        n_b,
    })
}

/// Exact p-value. Counts, for each achievable doubled rank sum, how many
/// size-`n_a` subsets of the pooled doubled ranks reach it.
fn exact_p(ranks: &[u64], n_a: usize, n_b: usize, doubled_u_a: i64, alt: Alternative) -> f64 {
    // count subsets of the smaller group size; U of the other side follows
    let a_is_small = n_a <= n_b;
    let size = n_a.min(n_b);
    let max_sum: usize = ranks.iter().sum::<u64>() as usize;
    let mut counts = vec![vec![0u128; max_sum + 1]; size + 1];
    counts[0][0] = 1;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=size).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let offset = (size * (size + 1)) as i64;
    let product = (n_a * n_b) as i64;
    let total: u128 = counts[size].iter().sum();
    let mut tail = 0u128;
    for (s, &c) in counts[size].iter().enumerate() {
        if c == 0 {
            continue;
        }
        let v_small = s as i64 - offset;
        let v_a = if a_is_small { v_small } else { 2 * product - v_small };
        let hit = match alt {
            Alternative::TwoSided => (v_a - product).abs() >= (doubled_u_a - product).abs(),
            Alternative::Greater => v_a >= doubled_u_a,
            Alternative::Less => v_a <= doubled_u_a,
        };
        if hit {
            tail += c;
        }
    }
    tail as f64 / total as f64
}

fn normal_p(pooled: &[f64], n_a: usize, n_b: usize, u: f64, alt: Alternative) -> f64 {
    let n = (n_a + n_b) as f64;
    let prod = (n_a * n_b) as f64;
    let ties: f64 = tie_groups(pooled)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = prod / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let sd = var.sqrt();
    let mean = prod / 2.0;
    let upper_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
    match alt {
        Alternative::TwoSided => {
            let z = ((u - mean).abs() - 0.5).max(0.0) / sd;
            2.0 * upper_tail(z)
        }
        Alternative::Greater => upper_tail((u - mean - 0.5) / sd),
        Alternative::Less => upper_tail(-(u - mean + 0.5) / sd),
    }
}

/// Per-report quantity compared by [`compare_runs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "metric", content = "target")]
pub enum RunMetric {
    /// Final-round holdout accuracy.
    Acc,
    /// Final-round holdout AUC-ROC.
    Auc,
    /// First round whose accuracy reaches the target; reports that never
    /// reach it count as `max_rounds + 1`.
    RoundsToTarget(f64),
}

impl RunMetric {
    pub fn name(&self) -> &'static str {
        match self {
            RunMetric::Acc => "acc",
            RunMetric::Auc => "auc",
            RunMetric::RoundsToTarget(_) => "rounds-to-target",
        }
    }

    pub fn extract(&self, report: &RunReport) -> Result<f64> {
        match self {
            RunMetric::Acc => report
                .records
                .last()
                .map(|r| r.acc)
                .ok_or_else(|| Error::invalid("report has no rounds")),
            RunMetric::Auc => report
                .records
                .last()
                .and_then(|r| r.auc)
                .ok_or_else(|| Error::invalid("report has no final AUC")),
            RunMetric::RoundsToTarget(target) => Ok(report.rounds_to_target(*target) as f64),
        }
    }
}

/// U test on one metric extracted from each report of the two arms.
pub fn compare_runs(
    reports_a: &[RunReport],
    reports_b: &[RunReport],
    metric: RunMetric,
    alternative: Alternative,
) -> Result<UTestResult> {
    if reports_a.len() < 3 || reports_b.len() < 3 {
        return Err(Error::invalid("compare_runs needs at least 3 reports per side"));
    }
    let a: Vec<f64> = reports_a.iter().map(|r| metric.extract(r)).collect::<Result<_>>()?;
    let b: Vec<f64> = reports_b.iter().map(|r| metric.extract(r)).collect::<Result<_>>()?;
    mann_whitney_u_with(&a, &b, alternative)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub comparison: String,
    pub metric: String,
    pub u: f64,
    pub p: f64,
    pub method: UMethod,
    pub n_a: usize,
    pub n_b: usize,
}

impl ComparisonRow {
    pub fn new(comparison: impl Into<String>, metric: &RunMetric, r: &UTestResult) -> Self {
        Self {
            comparison: comparison.into(),
            metric: metric.name().to_string(),
            u: r.u_statistic,
            p: r.p_value,
            method: r.method,
            n_a: r.n_a,
            n_b: r.n_b,
        }
    }
}

/// Spearman rank correlation with midrank ties; `None` when either input
/// is constant or lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
