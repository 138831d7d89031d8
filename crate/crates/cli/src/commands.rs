//! The five subcommands. Each returns the text to print on success and
//! writes its files through `write_atomic`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fedsel::data::{
    generate_synthetic_federation_with, load_csv_dataset, partition_noniid_with, split_holdout,
    FederatedDataset,
};
use fedsel::fault::{
    fit_weibull, optimal_checkpoint_interval, CostModel, CostModelParams, IntervalSolution,
    WeibullParams,
};
use fedsel::io::write_atomic;
use fedsel::orchestrator::{run_simulation, RoundConfig, RunReport};
use fedsel::privacy::calibrate_sigma;
use fedsel::rng::derive_seed;
use fedsel::selection::SelectionStrategy;
use fedsel::stats::{compare_runs, Alternative, RunMetric, UMethod};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, IntervalSetting};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Key word mixed into the seed when choosing which clients get noisy labels.
const NOISY_PICK: u64 = 0x006e_6f69_7379;

/// Build the federation for one trial seed.
pub fn build_federation(cfg: &ExperimentConfig, seed: u64) -> Result<FederatedDataset> {
    let d = &cfg.data;
    let mut fed = match &d.source {
        DataSource::Synthetic => generate_synthetic_federation_with(
            d.clients,
            d.samples_per_client,
            d.dim,
            d.dirichlet_alpha,
            &d.profiles,
            seed,
        )
        .map_err(|e| CliError::usage(format!("data: {e}")))?,
        DataSource::Csv {
            path,
            label_column,
            feature_columns,
        } => {
            let cols: Vec<&str> = feature_columns.iter().map(String::as_str).collect();
            let ds = load_csv_dataset(path, label_column, &cols)
                .map_err(|e| CliError::usage(format!("data.csv_path: {e}")))?;
            let (rest, hold, rest_rows, hold_rows) = split_holdout(&ds, d.holdout_fraction, seed)
                .map_err(|e| CliError::usage(format!("data.holdout_fraction: {e}")))?;
            partition_noniid_with(&rest, d.clients, d.dirichlet_alpha, &d.profiles, seed)
                .and_then(|f| f.map_rows(&rest_rows))
                .and_then(|f| f.with_holdout(hold, hold_rows))
                .map_err(|e| CliError::usage(format!("data: {e}")))?
        }
    };
    let n = fed.n_clients();
    let n_noisy = (d.noisy_fraction * n as f64).round() as usize;
    if n_noisy > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| derive_seed(seed, &[NOISY_PICK, i as u64]));
        order.truncate(n_noisy);
        order.sort_unstable();
        fed.corrupt_labels(&order, d.label_noise, seed)?;
    }
    Ok(fed)
}

/// Mean simulated duration of one client's local pass.
pub fn mean_local_work(fed: &FederatedDataset, round: &RoundConfig) -> f64 {
    let total: f64 = fed
        .profiles
        .iter()
        .zip(&fed.shards)
        .map(|(p, s)| round.train.epochs as f64 * s.len() as f64 * round.cost_per_sample / p.compute_capacity)
        .sum();
    total / fed.n_clients() as f64
}

/// Round settings for one federation, solving for the checkpoint interval
/// when it is set to `auto`. The horizon is `max_rounds` local passes and
/// the search runs from a thousandth of a pass to five passes.
pub fn resolve_round_config(
    cfg: &ExperimentConfig,
    fed: &FederatedDataset,
) -> Result<(RoundConfig, Option<IntervalSolution>)> {
    let mut round = cfg.base_round_config();
    if cfg.checkpoint_interval != IntervalSetting::Auto || !round.checkpoint.enabled {
        return Ok((round, None));
    }
    let work = mean_local_work(fed, &round);
    let cost = CostModelParams {
        total_time: work * round.max_rounds as f64,
        recovery_time: round.recovery_time,
        write_cost: round.write_cost,
    };
    let hi = (5.0 * work).min(cost.total_time);
    let sol = optimal_checkpoint_interval(&cost, &round.weibull, cfg.cost_model, (1e-3 * work, hi))?;
    round.checkpoint = sol.policy;
    Ok((round, Some(sol)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(CliError::Runtime)
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    write_atomic(&path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

fn report_name(seed: u64) -> String {
    format!("report_seed{seed}.jsonl")
}

/// Run `cfg.trials` seeds of one configuration, optionally writing every
/// report into `dir`.
fn run_trials(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Vec<(RunReport, Option<f64>)>> {
    let mut out = Vec::with_capacity(cfg.trials as usize);
    for t in 0..cfg.trials as u64 {
        let seed = cfg.seed.wrapping_add(t);
        let fed = build_federation(cfg, seed)?;
        let (round, sol) = resolve_round_config(cfg, &fed)?;
        let report = run_simulation(&fed, &round, &cfg.selection, seed)
            .with_context(|| format!("trial with seed {seed}"))?;
        if let Some(dir) = dir {
            write(dir.join(report_name(seed)), report.to_jsonl().as_bytes())?;
        }
        out.push((report, sol.map(|s| s.policy.interval)));
    }
    Ok(out)
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

#[derive(Debug, Serialize)]
struct TrialSummary {
    seed: u64,
    report: String,
    rounds_run: u32,
    converged: bool,
    final_acc: Option<f64>,
    final_loss: Option<f64>,
    final_auc: Option<f64>,
    sim_time: f64,
    total_failures: u32,
    total_recoveries: u32,
    epsilon_spent: Option<f64>,
    checkpoint_interval: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct RunSummaryFile {
    trials: u32,
    strategy: SelectionStrategy,
    means: BTreeMap<&'static str, Option<f64>>,
    per_trial: Vec<TrialSummary>,
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<String> {
    ensure_dir(&cfg.output_dir)?;
    let runs = run_trials(cfg, Some(&cfg.output_dir))?;
    let per_trial: Vec<TrialSummary> = runs
        .iter()
        .map(|(r, interval)| {
            let s = &r.summary;
            TrialSummary {
                seed: s.seed,
                report: report_name(s.seed),
                rounds_run: s.rounds_run,
                converged: s.converged,
                final_acc: s.final_acc,
                final_loss: s.final_loss,
                final_auc: s.final_auc,
                sim_time: s.sim_time,
                total_failures: s.total_failures,
                total_recoveries: s.total_recoveries,
                epsilon_spent: s.epsilon_spent,
                checkpoint_interval: *interval,
                warnings: s.warnings.clone(),
            }
        })
        .collect();
    let mut means = BTreeMap::new();
    means.insert("final_acc", mean(per_trial.iter().map(|t| t.final_acc)));
    means.insert("final_loss", mean(per_trial.iter().map(|t| t.final_loss)));
    means.insert("final_auc", mean(per_trial.iter().map(|t| t.final_auc)));
    means.insert("rounds_run", mean(per_trial.iter().map(|t| Some(t.rounds_run as f64))));
    means.insert("sim_time", mean(per_trial.iter().map(|t| Some(t.sim_time))));
    means.insert("total_failures", mean(per_trial.iter().map(|t| Some(t.total_failures as f64))));
    means.insert("total_recoveries", mean(per_trial.iter().map(|t| Some(t.total_recoveries as f64))));
    means.insert("epsilon_spent", mean(per_trial.iter().map(|t| t.epsilon_spent)));

    let mut text = String::new();
    for t in &per_trial {
        writeln!(
            text,
            "seed {}: rounds {} acc {} loss {} auc {} sim_time {:.3}",
            t.seed,
            t.rounds_run,
            fmt_opt(t.final_acc),
            fmt_opt(t.final_loss),
            fmt_opt(t.final_auc),
            t.sim_time
        )
        .unwrap();
        for w in &t.warnings {
            writeln!(text, "  warning: {w}").unwrap();
        }
    }
    writeln!(
        text,
        "mean over {} trial(s): acc {} loss {} auc {}",
        per_trial.len(),
        fmt_opt(means["final_acc"]),
        fmt_opt(means["final_loss"]),
        fmt_opt(means["final_auc"])
    )
    .unwrap();

    let summary = RunSummaryFile {
        trials: cfg.trials,
        strategy: cfg.selection.strategy,
        means,
        per_trial,
    };
    let json = serde_json::to_string_pretty(&summary).context("encoding summary")?;
    write(cfg.output_dir.join("summary.json"), format!("{json}\n").as_bytes())?;
    Ok(text)
}

/// Check a list of ε values for a sweep.
pub fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.len() < 2 {
        return Err(CliError::usage("epsilons: a sweep needs at least two values"));
    }
    for (i, e) in eps.iter().enumerate() {
        if !(e.is_finite() && *e > 0.0) {
            return Err(CliError::usage(format!("epsilons: {e} is not a positive real")));
        }
        if eps[..i].contains(e) {
            return Err(CliError::usage(format!("epsilons: {e} listed more than once")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub sigma: f64,
    pub mean_acc: f64,
    pub mean_loss: f64,
}

pub fn cmd_sweep_epsilon(cfg: &ExperimentConfig, epsilons: &[f64]) -> Result<String> {
    check_epsilons(epsilons)?;
    ensure_dir(&cfg.output_dir)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut c = cfg.clone();
        c.round.dp.enabled = true;
        c.round.dp.budget.epsilon = eps;
        let sigma = calibrate_sigma(&c.round.dp.budget, c.round.dp.clip_norm)?.sigma;
        let runs = run_trials(&c, None)?;
        let acc = mean(runs.iter().map(|(r, _)| r.summary.final_acc));
        let loss = mean(runs.iter().map(|(r, _)| r.summary.final_loss));
        let (Some(mean_acc), Some(mean_loss)) = (acc, loss) else {
            return Err(CliError::Runtime(anyhow::anyhow!("no completed rounds at epsilon {eps}")));
        };
        rows.push(SweepRow {
            epsilon: eps,
            sigma,
            mean_acc,
            mean_loss,
        });
    }
    let mut csv = String::from("epsilon,sigma,mean_acc,mean_loss\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.epsilon, r.sigma, r.mean_acc, r.mean_loss).unwrap();
    }
    write(cfg.output_dir.join("sweep.csv"), csv.as_bytes())?;

    let mut text = format!("{:>10} {:>12} {:>10} {:>12}\n", "epsilon", "sigma", "mean_acc", "mean_loss");
    for r in &rows {
        writeln!(text, "{:>10} {:>12.6} {:>10.4} {:>12.6}", r.epsilon, r.sigma, r.mean_acc, r.mean_loss).unwrap();
    }
    Ok(text)
}

fn method_name(m: UMethod) -> &'static str {
    match m {
        UMethod::Exact => "exact",
        UMethod::NormalApprox => "normal",
    }
}

fn strategy_name(s: SelectionStrategy) -> &'static str {
    match s {
        SelectionStrategy::Utility => "utility",
        SelectionStrategy::Random => "random",
        SelectionStrategy::Full => "full",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub u: f64,
    pub p: f64,
    pub method: &'static str,
    pub n_a: usize,
    pub n_b: usize,
}

/// Utility selection against `cfg.baseline` on paired seeds: both arms
/// see the same federations and the same seeds.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<String> {
    if cfg.trials < 3 {
        return Err(CliError::usage("invalid config: experiment.trials: compare needs at least 3"));
    }
    let arm = |strategy: SelectionStrategy, dir: &str| -> Result<Vec<RunReport>> {
        let mut c = cfg.clone();
        c.selection.strategy = strategy;
        let path = cfg.output_dir.join(dir);
        ensure_dir(&path)?;
        Ok(run_trials(&c, Some(&path))?.into_iter().map(|(r, _)| r).collect())
    };
    let a_name = "utility";
    let b_name = strategy_name(cfg.baseline);
    let a = arm(SelectionStrategy::Utility, &format!("a_{a_name}"))?;
    let b = arm(cfg.baseline, &format!("b_{b_name}"))?;

    let mut rows = Vec::new();
    for metric in &cfg.metrics {
        let r = compare_runs(&a, &b, *metric, Alternative::TwoSided)
            .with_context(|| format!("metric {}", metric.name()))?;
        let arm_mean = |reps: &[RunReport]| -> Result<f64> {
            let v = reps
                .iter()
                .map(|x| metric.extract(x))
                .collect::<fedsel::Result<Vec<f64>>>()?;
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        };
        rows.push(CompareRow {
            metric: match metric {
                RunMetric::RoundsToTarget(t) => format!("rounds-to-target@{t}"),
                m => m.name().to_string(),
            },
            mean_a: arm_mean(&a)?,
            mean_b: arm_mean(&b)?,
            u: r.u_statistic,
            p: r.p_value,
            method: method_name(r.method),
            n_a: r.n_a,
            n_b: r.n_b,
        });
    }

    let comparison = format!("{a_name} vs {b_name}");
    let mut csv = String::from("comparison,metric,mean_a,mean_b,u,p,method,n_a,n_b\n");
    for r in &rows {
        writeln!(
            csv,
            "{comparison},{},{},{},{},{},{},{},{}",
            r.metric, r.mean_a, r.mean_b, r.u, r.p, r.method, r.n_a, r.n_b
        )
        .unwrap();
    }
    write(cfg.output_dir.join("compare.csv"), csv.as_bytes())?;

    let mut text = format!("{comparison} over {} paired seeds\n", cfg.trials);
    writeln!(text, "{:<24} {:>10} {:>10} {:>8} {:>10} {:>7}", "metric", "mean_a", "mean_b", "U", "p", "method").unwrap();
    for r in &rows {
        writeln!(
            text,
            "{:<24} {:>10.4} {:>10.4} {:>8} {:>10.6} {:>7}",
            r.metric, r.mean_a, r.mean_b, r.u, r.p, r.method
        )
        .unwrap();
    }
    Ok(text)
}

#[derive(Debug, Clone, Copy)]
pub struct CheckpointOptArgs {
    pub total_time: f64,
    pub recovery_time: f64,
    pub write_cost: f64,
    pub lambda: f64,
    pub shape: f64,
    pub model: CostModel,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CheckpointOptFile {
    model: CostModel,
    t_min: f64,
    t_max: f64,
    t_c_star: f64,
    cost: f64,
    warning: Option<String>,
}

/// Default search domain is `[T·1e-4, T]`.
pub fn cmd_checkpoint_opt(args: &CheckpointOptArgs, out: Option<&Path>) -> Result<String> {
    let cost = CostModelParams {
        total_time: args.total_time,
        recovery_time: args.recovery_time,
        write_cost: args.write_cost,
    };
    cost.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let weibull = WeibullParams::new(args.lambda, args.shape).map_err(|e| CliError::usage(e.to_string()))?;
    let lo = args.t_min.unwrap_or(1e-4 * args.total_time);
    let hi = args.t_max.unwrap_or(args.total_time);
    let sol = optimal_checkpoint_interval(&cost, &weibull, args.model, (lo, hi))
        .map_err(|e| CliError::usage(e.to_string()))?;

    let mut text = format!("t_c* = {}\ncost = {}\n", sol.policy.interval, sol.cost);
    if let Some(w) = &sol.warning {
        writeln!(text, "warning: {w}").unwrap();
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let file = CheckpointOptFile {
            model: args.model,
            t_min: lo,
            t_max: hi,
            t_c_star: sol.policy.interval,
            cost: sol.cost,
            warning: sol.warning.clone(),
        };
        let json = serde_json::to_string_pretty(&file).context("encoding result")?;
        write(dir.join("checkpoint_opt.json"), format!("{json}\n").as_bytes())?;
    }
    Ok(text)
}

/// Failure times, one per line. A first line that is not a number is
/// taken as a header.
pub fn read_failure_times(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let cell = line.split(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => out.push(v),
            Ok(v) => {
                return Err(CliError::usage(format!(
                    "{}:{}: failure time {v} is not a positive real",
                    path.display(),
                    n + 1
                )))
            }
            Err(_) if out.is_empty() && n == 0 => continue,
            Err(_) => {
                return Err(CliError::usage(format!(
                    "{}:{}: cannot parse `{cell}` as a real",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct WeibullFitFile {
    scale_lambda: f64,
    shape_k: f64,
    samples: usize,
}

pub fn cmd_fit_weibull(path: &Path, out: Option<&Path>) -> Result<String> {
    let times = read_failure_times(path)?;
    let fit = fit_weibull(&times).map_err(|e| match e {
        fedsel::Error::InsufficientData { .. } => CliError::usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let file = WeibullFitFile {
            scale_lambda: fit.scale_lambda,
            shape_k: fit.shape_k,
            samples: times.len(),
        };
        let json = serde_json::to_string_pretty(&file).context("encoding fit")?;
        write(dir.join("weibull_fit.json"), format!("{json}\n").as_bytes())?;
    }
    Ok(format!(
        "lambda = {}\nk = {}\nn = {}\n",
        fit.scale_lambda,
        fit.shape_k,
        times.len()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_list_rules() {
        assert!(check_epsilons(&[0.1, 1.0, 10.0]).is_ok());
        assert!(matches!(check_epsilons(&[1.0]), Err(CliError::Usage(_))));
        assert!(matches!(check_epsilons(&[1.0, 2.0, 1.0]), Err(CliError::Usage(_))));
        assert!(matches!(check_epsilons(&[1.0, -2.0]), Err(CliError::Usage(_))));
    }

    #[test]
    fn noisy_clients_are_chosen_by_seed() {
        let cfg = ExperimentConfig::parse("data.clients = 10\ndata.samples_per_client = 20\ndata.noisy_fraction = 0.5").unwrap();
        let clean = ExperimentConfig::parse("data.clients = 10\ndata.samples_per_client = 20").unwrap();
        let a = build_federation(&cfg, 3).unwrap();
        let b = build_federation(&clean, 3).unwrap();
        let changed = a.shards.iter().zip(&b.shards).filter(|(x, y)| x.labels() != y.labels()).count();
        assert!(changed > 0 && changed <= 5, "{changed}");
        assert_eq!(a, build_federation(&cfg, 3).unwrap());
    }

    #[test]
    fn auto_interval_is_solved_per_federation() {
        let cfg = ExperimentConfig::parse("data.clients = 5\nselection.k = 5\ncheckpoint.interval = auto").unwrap();
        let fed = build_federation(&cfg, 1).unwrap();
        let (round, sol) = resolve_round_config(&cfg, &fed).unwrap();
        let sol = sol.unwrap();
        assert_eq!(round.checkpoint, sol.policy);
        let work = mean_local_work(&fed, &round);
        assert!(sol.policy.interval > 1e-3 * work && sol.policy.interval <= 5.0 * work);
    }
}
