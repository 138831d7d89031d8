//! Experiment configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! data.clients = 40
//! privacy.epsilon = 1.0
//! selection.strategy = utility
//! ```
//!
//! Unknown keys, repeated keys and out-of-range values are rejected with a
//! message naming the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedsel::data::ProfileRanges;
use fedsel::fault::{CheckpointPolicy, CheckpointStore, CostModel};
use fedsel::orchestrator::RoundConfig;
use fedsel::privacy::NoiseMode;
use fedsel::selection::{SelectionConfig, SelectionStrategy};
use fedsel::stats::RunMetric;

/// A rejected configuration value.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv {
        path: PathBuf,
        label_column: String,
        feature_columns: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub clients: usize,
    pub samples_per_client: usize,
    pub dim: usize,
    pub dirichlet_alpha: f64,
    /// Holdout share for CSV input; synthetic data carries its own holdout.
    pub holdout_fraction: f64,
    pub profiles: ProfileRanges,
    /// Share of clients whose labels are corrupted.
    pub noisy_fraction: f64,
    /// Per-label corruption probability on those clients.
    pub label_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            clients: 40,
            samples_per_client: 100,
            dim: 10,
            dirichlet_alpha: 0.5,
            holdout_fraction: fedsel::data::HOLDOUT_FRACTION,
            profiles: ProfileRanges::default(),
            noisy_fraction: 0.0,
            label_noise: 1.0,
        }
    }
}

/// How the checkpoint interval is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalSetting {
    Fixed(f64),
    /// Solve for the optimum per federation; see `commands::resolve_interval`.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub round: RoundConfig,
    pub selection: SelectionConfig,
    pub checkpoint_interval: IntervalSetting,
    pub cost_model: CostModel,
    pub trials: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub baseline: SelectionStrategy,
    pub metrics: Vec<RunMetric>,
    pub target_accuracy: f64,
    pub epsilons: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            round: RoundConfig::default(),
            selection: SelectionConfig::default(),
            checkpoint_interval: IntervalSetting::Fixed(RoundConfig::default().checkpoint.interval),
            cost_model: CostModel::Amortized,
            trials: 1,
            seed: 0,
            output_dir: PathBuf::from("out"),
            baseline: SelectionStrategy::Random,
            metrics: vec![
                RunMetric::Acc,
                RunMetric::Auc,
                RunMetric::RoundsToTarget(0.8),
            ],
            target_accuracy: 0.8,
            epsilons: vec![0.1, 0.5, 1.0, 5.0, 10.0],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::new(key, format!("cannot parse `{value}`: {e}")))
}

fn real(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(key, format!("`{value}` is not a finite real")))
    }
}

fn reals(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| real(key, s.trim()))
        .collect()
}

fn range(key: &str, value: &str) -> Result<(f64, f64)> {
    match reals(key, value)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(ConfigError::new(key, format!("expected `lo,hi`, got `{value}`"))),
    }
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected true or false, got `{value}`"))),
    }
}

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message))
    }
}

/// Split the file into `key -> value`, rejecting malformed and repeated lines.
fn entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("line {}", n + 1), "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::new(format!("line {}", n + 1), "empty key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::new(k, "key given more than once"));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut csv_path = None;
        let mut label_column = String::from("label");
        let mut feature_columns = Vec::new();
        let mut source = String::from("synthetic");
        let mut k_max_set = false;
        let mut metrics_raw = None;
        let mut target_set = false;

        for (key, value) in entries(text)? {
            let (k, v) = (key.as_str(), value.as_str());
            let r = &mut cfg.round;
            match k {
                "data.source" => source = v.to_string(),
                "data.csv_path" => csv_path = Some(PathBuf::from(v)),
                "data.label_column" => label_column = v.to_string(),
                "data.feature_columns" => {
                    feature_columns = v.split(',').map(|s| s.trim().to_string()).collect()
                }
                "data.clients" => cfg.data.clients = parse(k, v)?,
                "data.samples_per_client" => cfg.data.samples_per_client = parse(k, v)?,
                "data.dim" => cfg.data.dim = parse(k, v)?,
                "data.dirichlet_alpha" => cfg.data.dirichlet_alpha = real(k, v)?,
                "data.holdout_fraction" => cfg.data.holdout_fraction = real(k, v)?,
                "data.noisy_fraction" => cfg.data.noisy_fraction = real(k, v)?,
                "data.label_noise" => cfg.data.label_noise = real(k, v)?,
                "profiles.comm_cost" => cfg.data.profiles.comm_cost = range(k, v)?,
                "profiles.comp_cost" => cfg.data.profiles.comp_cost = range(k, v)?,
                "profiles.compute_capacity" => cfg.data.profiles.compute_capacity = range(k, v)?,
                "profiles.availability_prob" => cfg.data.profiles.availability_prob = range(k, v)?,

                "train.epochs" => r.train.epochs = parse(k, v)?,
                "train.lr" => r.train.lr = real(k, v)?,
                "train.batch_size" => {
                    r.train.batch_size = if v == "full" { usize::MAX } else { parse(k, v)? }
                }
                "train.l2" => r.train.l2 = real(k, v)?,

                "privacy.enabled" => r.dp.enabled = boolean(k, v)?,
                "privacy.epsilon" => r.dp.budget.epsilon = real(k, v)?,
                "privacy.delta" => r.dp.budget.delta = real(k, v)?,
                "privacy.clip_norm" => r.dp.clip_norm = real(k, v)?,
                "privacy.mode" => {
                    r.dp.mode = match v {
                        "per-round" => NoiseMode::PerRound,
                        "per-step" => NoiseMode::PerStep,
                        _ => return Err(ConfigError::new(k, "expected per-round or per-step")),
                    }
                }

                "fault.injection" => r.failure_injection = boolean(k, v)?,
                "fault.weibull_lambda" => r.weibull.scale_lambda = real(k, v)?,
                "fault.weibull_k" => r.weibull.shape_k = real(k, v)?,
                "fault.recovery_time" => r.recovery_time = real(k, v)?,
                "fault.write_cost" => r.write_cost = real(k, v)?,
                "fault.max_recoveries" => r.max_recoveries = parse(k, v)?,

                "checkpoint.enabled" => r.checkpoint.enabled = boolean(k, v)?,
                "checkpoint.interval" => {
                    cfg.checkpoint_interval = if v == "auto" {
                        IntervalSetting::Auto
                    } else {
                        IntervalSetting::Fixed(real(k, v)?)
                    }
                }
                "checkpoint.cost_model" => {
                    cfg.cost_model = v.parse().map_err(|e| ConfigError::new(k, format!("{e}")))?
                }
                "checkpoint.dir" => r.checkpoint_store = CheckpointStore::Directory(PathBuf::from(v)),

                "sim.max_rounds" => r.max_rounds = parse(k, v)?,
                "sim.convergence_tol" => r.convergence_tol = real(k, v)?,
                "sim.convergence_patience" => r.convergence_patience = parse(k, v)?,
                "sim.cost_per_sample" => r.cost_per_sample = real(k, v)?,
                "sim.idle_round_time" => r.idle_round_time = real(k, v)?,
                "sim.weighted_aggregation" => r.weighted_aggregation = boolean(k, v)?,
                "sim.parallel" => r.parallel = boolean(k, v)?,

                "selection.k" => cfg.selection.k = parse(k, v)?,
                "selection.k_min" => cfg.selection.k_min = parse(k, v)?,
                "selection.k_max" => {
                    cfg.selection.k_max = parse(k, v)?;
                    k_max_set = true;
                }
                "selection.adaptive" => cfg.selection.adaptive = boolean(k, v)?,
                "selection.patience" => cfg.selection.patience = parse(k, v)?,
                "selection.alpha" => cfg.selection.alpha = real(k, v)?,
                "selection.gamma" => cfg.selection.gamma = real(k, v)?,
                "selection.ema_decay" => cfg.selection.ema_decay = real(k, v)?,
                "selection.utility_weights" => match reals(k, v)?.as_slice() {
                    [a, b, c] => cfg.selection.utility_weights = [*a, *b, *c],
                    _ => return Err(ConfigError::new(k, "expected three comma-separated weights")),
                },
                "selection.strategy" => {
                    cfg.selection.strategy = v.parse().map_err(|e| ConfigError::new(k, format!("{e}")))?
                }

                "experiment.trials" => cfg.trials = parse(k, v)?,
                "experiment.seed" => cfg.seed = parse(k, v)?,
                "experiment.output_dir" => cfg.output_dir = PathBuf::from(v),
                "experiment.baseline" => {
                    cfg.baseline = v.parse().map_err(|e| ConfigError::new(k, format!("{e}")))?
                }
                "experiment.metrics" => metrics_raw = Some(v.to_string()),
                "experiment.target_accuracy" => {
                    cfg.target_accuracy = real(k, v)?;
                    target_set = true;
                }
                "sweep.epsilons" => cfg.epsilons = reals(k, v)?,
                _ => return Err(ConfigError::new(k, "unknown key")),
            }
        }

        cfg.data.source = match source.as_str() {
            "synthetic" => DataSource::Synthetic,
            "csv" => DataSource::Csv {
                path: csv_path.ok_or_else(|| ConfigError::new("data.csv_path", "required when data.source = csv"))?,
                label_column,
                feature_columns,
            },
            _ => return Err(ConfigError::new("data.source", "expected synthetic or csv")),
        };
        if !k_max_set {
            cfg.selection.k_max = if cfg.selection.adaptive {
                cfg.data.clients.max(cfg.selection.k)
            } else {
                cfg.selection.k
            };
        }
        if let Some(raw) = metrics_raw {
            cfg.metrics = parse_metrics(&raw, cfg.target_accuracy)?;
        } else if target_set {
            for m in &mut cfg.metrics {
                if let RunMetric::RoundsToTarget(t) = m {
                    *t = cfg.target_accuracy;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks for every field, each naming its key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let r = &self.round;
        let s = &self.selection;
        check(d.clients >= 1, "data.clients", "must be >= 1")?;
        if d.source == DataSource::Synthetic {
            check(d.samples_per_client >= 2, "data.samples_per_client", "must be >= 2")?;
            check(d.dim >= 1, "data.dim", "must be >= 1")?;
        }
        if let DataSource::Csv { feature_columns, .. } = &d.source {
            check(!feature_columns.is_empty(), "data.feature_columns", "list at least one column")?;
        }
        check(d.dirichlet_alpha > 0.0, "data.dirichlet_alpha", "must be > 0")?;
        check(
            d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0,
            "data.holdout_fraction",
            "must lie in (0, 1)",
        )?;
        check((0.0..=1.0).contains(&d.noisy_fraction), "data.noisy_fraction", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&d.label_noise), "data.label_noise", "must lie in [0, 1]")?;
        d.profiles
            .validate()
            .map_err(|e| ConfigError::new("profiles", e.to_string()))?;

        check(r.train.epochs >= 1, "train.epochs", "must be >= 1")?;
        check(r.train.lr >= 0.0, "train.lr", "must be >= 0")?;
        check(r.train.batch_size >= 1, "train.batch_size", "must be >= 1")?;
        check(r.train.l2 >= 0.0, "train.l2", "must be >= 0")?;

        check(r.dp.budget.epsilon > 0.0, "privacy.epsilon", format!("must be > 0, got {}", r.dp.budget.epsilon))?;
        check(
            r.dp.budget.delta > 0.0 && r.dp.budget.delta < 1.0,
            "privacy.delta",
            format!("must lie in (0, 1), got {}", r.dp.budget.delta),
        )?;
        check(r.dp.clip_norm > 0.0, "privacy.clip_norm", "must be > 0")?;

        check(r.weibull.scale_lambda > 0.0, "fault.weibull_lambda", "must be > 0")?;
        check(r.weibull.shape_k > 0.0, "fault.weibull_k", "must be > 0")?;
        check(r.recovery_time >= 0.0, "fault.recovery_time", "must be >= 0")?;
        check(r.write_cost >= 0.0, "fault.write_cost", "must be >= 0")?;
        if let IntervalSetting::Fixed(t) = self.checkpoint_interval {
            check(t > 0.0, "checkpoint.interval", "must be > 0 or `auto`")?;
        }
        if self.checkpoint_interval == IntervalSetting::Auto && r.checkpoint.enabled {
            check(r.write_cost > 0.0, "fault.write_cost", "must be > 0 when checkpoint.interval = auto")?;
        }

        check(r.max_rounds >= 1, "sim.max_rounds", "must be >= 1")?;
        check(r.convergence_tol >= 0.0, "sim.convergence_tol", "must be >= 0")?;
        check(r.cost_per_sample > 0.0, "sim.cost_per_sample", "must be > 0")?;
        check(r.idle_round_time > 0.0, "sim.idle_round_time", "must be > 0")?;

        check(s.k >= 1, "selection.k", "must be >= 1")?;
        check(s.k_min <= s.k, "selection.k_min", "must be <= selection.k")?;
        check(s.k <= s.k_max, "selection.k_max", "must be >= selection.k")?;
        check(
            s.k_max <= d.clients,
            "selection.k_max",
            format!("must be <= data.clients ({})", d.clients),
        )?;
        check(s.alpha >= 0.0, "selection.alpha", "must be >= 0")?;
        check(s.gamma >= 0.0, "selection.gamma", "must be >= 0")?;
        check(s.patience >= 1, "selection.patience", "must be >= 1")?;
        check((0.0..1.0).contains(&s.ema_decay), "selection.ema_decay", "must lie in [0, 1)")?;
        let w = s.utility_weights;
        check(
            w.iter().all(|v| *v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "selection.utility_weights",
            "must be nonnegative and sum to 1",
        )?;

        check(self.trials >= 1, "experiment.trials", "must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.target_accuracy),
            "experiment.target_accuracy",
            "must lie in [0, 1]",
        )?;
        check(!self.metrics.is_empty(), "experiment.metrics", "list at least one metric")?;
        Ok(())
    }

    /// Round settings with a fixed checkpoint interval filled in. `Auto`
    /// intervals are resolved later, once the federation is known.
    pub fn base_round_config(&self) -> RoundConfig {
        let mut r = self.round.clone();
        if let IntervalSetting::Fixed(t) = self.checkpoint_interval {
            r.checkpoint = CheckpointPolicy {
                interval: t,
                enabled: r.checkpoint.enabled,
            };
        }
        r
    }
}

fn parse_metrics(raw: &str, target: f64) -> Result<Vec<RunMetric>> {
    let mut out: Vec<RunMetric> = Vec::new();
    for name in raw.split(',').map(str::trim) {
        let m = match name {
            "acc" => RunMetric::Acc,
            "auc" => RunMetric::Auc,
            "rounds-to-target" => RunMetric::RoundsToTarget(target),
            _ => {
                return Err(ConfigError::new(
                    "experiment.metrics",
                    format!("unknown metric `{name}` (expected acc, auc or rounds-to-target)"),
                ))
            }
        };
        if out.iter().any(|o| o.name() == m.name()) {
            return Err(ConfigError::new("experiment.metrics", format!("`{name}` listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}
