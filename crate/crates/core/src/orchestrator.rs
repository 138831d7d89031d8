//! Round loop of the simulator.
//!
//! Each round: sample the available clients, select a subset, let every
//! selected client train locally (with clipping and noise, periodic
//! checkpoints and injected Weibull failures), average the delivered
//! models, evaluate on the holdout, update utility scores and K, and
//! advance the simulated clock by the slowest client.
//!
//! Client work only reads shared state and draws from streams keyed by
//! `(seed, round, client)`, so running clients on a thread pool gives the
//! same result as running them one after another. Updates are collected in
//! ascending client order, which fixes the floating-point summation order
//! of the average.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientProfile, Dataset, FederatedDataset};
use crate::error::{Error, Result};
use crate::fault::{
    recover_without_checkpoint, sample_failure_time_from, Checkpoint, CheckpointPolicy,
    CheckpointStore, StoredCheckpoint, WeibullParams,
};
use crate::model::{evaluate, objective, Gradient, LocalRun, ModelParams, TrainConfig, TrainStats};
use crate::privacy::{
    add_gaussian_noise_from, clip_update, sequential_budget, DpConfig, NoiseMode,
};
use crate::rng::{self, Purpose};
use crate::selection::{
    adapt_k, capacity_norms, compute_cost, compute_objective, compute_utility,
    get_available_clients, initial_utilities, select_random, select_top_k, window_gain,
    SelectionConfig, SelectionStrategy, UtilityScore,
};
use crate::stats::{accuracy, auc_roc};

/// Everything a round needs besides the selection policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub train: TrainConfig,
    pub dp: DpConfig,
    pub checkpoint: CheckpointPolicy,
    pub checkpoint_store: CheckpointStore,
    pub weibull: WeibullParams,
    pub failure_injection: bool,
    /// Restore time after a failure when checkpointing is on (t_r).
    pub recovery_time: f64,
    /// Simulated seconds per checkpoint write (c_w).
    pub write_cost: f64,
    /// Failures a client may recover from within one round; the next one
    /// drops its update.
    pub max_recoveries: u32,
    pub max_rounds: u32,
    pub convergence_tol: f64,
    /// Plateau length for convergence; 0 disables early stopping.
    pub convergence_patience: usize,
    /// Simulated seconds to process one sample at capacity 1.
    pub cost_per_sample: f64,
    /// Clock advance for a round with nobody available.
    pub idle_round_time: f64,
    /// Weight the average by shard size instead of plain averaging.
    pub weighted_aggregation: bool,
    /// Train selected clients on the rayon pool.
    pub parallel: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dp: DpConfig::default(),
            checkpoint: CheckpointPolicy {
                interval: 1.0,
                enabled: true,
            },
            checkpoint_store: CheckpointStore::Memory,
            weibull: WeibullParams {
                scale_lambda: 20.0,
                shape_k: 1.5,
            },
            failure_injection: false,
            recovery_time: 0.5,
            write_cost: 0.05,
            max_recoveries: 3,
            max_rounds: 200,
            convergence_tol: 0.001,
            convergence_patience: 10,
            cost_per_sample: 0.01,
            idle_round_time: 1.0,
            weighted_aggregation: false,
            parallel: true,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.dp.enabled {
            self.dp.validate()?;
        }
        if self.checkpoint.enabled && !(self.checkpoint.interval > 0.0) {
            return Err(Error::invalid("checkpoint interval must be > 0"));
        }
        self.weibull.validate()?;
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be a nonnegative real, got {v}")))
            }
        };
        nonneg("recovery_time", self.recovery_time)?;
        nonneg("write_cost", self.write_cost)?;
        nonneg("convergence_tol", self.convergence_tol)?;
        if !(self.cost_per_sample.is_finite() && self.cost_per_sample > 0.0) {
            return Err(Error::invalid("cost_per_sample must be > 0"));
        }
        if !(self.idle_round_time.is_finite() && self.idle_round_time > 0.0) {
            return Err(Error::invalid("idle_round_time must be > 0"));
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be >= 1"));
        }
        Ok(())
    }
}

/// Server state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub global_params: ModelParams,
    /// Rounds started so far, including skipped ones.
    pub round: u32,
    pub utilities: Vec<UtilityScore>,
    /// Holdout accuracy of each completed round.
    pub accuracy_history: Vec<f64>,
    pub sim_clock: f64,
    pub rng_root: u64,
    /// Current selection size.
    pub k: usize,
    /// Length of `accuracy_history` when K last changed.
    pub k_changed_at: usize,
    /// Rounds each client delivered an update in.
    pub participation: Vec<u32>,
}

impl GlobalState {
    pub fn new(fed: &FederatedDataset, sel: &SelectionConfig, seed: u64) -> Self {
        Self {
            global_params: ModelParams::zeros(fed.dim()),
            round: 0,
            utilities: initial_utilities(&data_fractions(fed), &capacity_norms(&fed.profiles), sel),
            accuracy_history: Vec::new(),
            sim_clock: 0.0,
            rng_root: seed,
            k: sel.k,
            k_changed_at: 0,
            participation: vec![0; fed.n_clients()],
        }
    }
}

fn data_fractions(fed: &FederatedDataset) -> Vec<f64> {
    let total = fed.total_rows().max(1) as f64;
    fed.shards.iter().map(|s| s.len() as f64 / total).collect()
}

/// One completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: u32,
    pub selected: Vec<u32>,
    pub k: usize,
    pub acc: f64,
    pub loss: f64,
    pub auc: Option<f64>,
    pub objective: f64,
    pub cost: f64,
    pub failures: u32,
    pub recoveries: u32,
    /// Clients whose update was dropped after exhausting recoveries.
    pub excluded: Vec<u32>,
    pub checkpoints: u32,
    pub sim_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds_run: u32,
    pub max_rounds: u32,
    pub sim_time: f64,
    pub converged: bool,
    pub final_acc: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_auc: Option<f64>,
    /// Basic composition over the most frequent participant; `None` with
    /// privacy off.
    pub epsilon_spent: Option<f64>,
    pub delta_spent: Option<f64>,
    pub skipped_rounds: Vec<u32>,
    pub total_failures: u32,
    pub total_recoveries: u32,
    pub warnings: Vec<String>,
    pub final_params: Vec<f64>,
    /// Host time; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: RunSummary,
}

impl RunReport {
    /// One JSON object per round record, then `{"summary": {...}}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        let line = SummaryLine {
            summary: self.summary.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if line.trim_start().starts_with("{\"summary\"") {
                let s: SummaryLine = serde_json::from_str(line)
                    .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
                summary = Some(s.summary);
            } else {
                records.push(
                    serde_json::from_str(line)
                        .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?,
                );
            }
        }
        let summary = summary.ok_or_else(|| Error::invalid("report has no summary line"))?;
        Ok(Self { records, summary })
    }

    /// First round whose accuracy reaches `target`, or `max_rounds + 1`.
    pub fn rounds_to_target(&self, target: f64) -> u32 {
        self.records
            .iter()
            .find(|r| r.acc >= target)
            .map(|r| r.round)
            .unwrap_or(self.summary.max_rounds + 1)
    }

    /// Simulated clock at the end of the first round reaching `target`.
    pub fn sim_time_to_target(&self, target: f64) -> Option<f64> {
        self.records.iter().find(|r| r.acc >= target).map(|r| r.sim_clock)
    }
}

/// Coordinate-wise mean of the received models, summed in the given order.
pub fn aggregate(updates: &[ModelParams]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let len = first.len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::invalid("updates differ in length"));
    }
    let mut sum = vec![0.0; len];
    for u in updates {
        for (s, v) in sum.iter_mut().zip(u.as_slice()) {
            *s += v;
        }
    }
    let n = updates.len() as f64;
    Ok(ModelParams(sum.into_iter().map(|s| s / n).collect()))
}

/// Mean weighted by `weights` (e.g. shard sizes).
pub fn aggregate_weighted(updates: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    if updates.len() != weights.len() {
        return Err(Error::invalid("one weight per update required"));
    }
    let len = first.len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::invalid("updates differ in length"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be nonnegative with a positive sum"));
    }
    let mut sum = vec![0.0; len];
    for (u, w) in updates.iter().zip(weights) {
        for (s, v) in sum.iter_mut().zip(u.as_slice()) {
            *s += w * v;
        }
    }
    Ok(ModelParams(sum.into_iter().map(|s| s / total).collect()))
}

/// True once the best accuracy of the last `patience` rounds beats the best
/// before them by less than `tol`.
pub fn check_convergence(accuracy_history: &[f64], tol: f64, patience: usize) -> bool {
    window_gain(accuracy_history, patience).is_some_and(|g| g < tol)
}

/// What one client produced in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub client_id: u32,
    /// Model delivered to the server; `None` when the client was dropped.
    pub update: Option<ModelParams>,
    pub stats: Option<TrainStats>,
    /// Simulated seconds the client was busy, including lost work.
    pub elapsed: f64,
    pub failures: u32,
    pub recoveries: u32,
    pub checkpoints: u32,
}

/// Per-client clock tracking time since the last (re)start of the process,
/// against which the next sampled failure time is checked.
struct ClientClock {
    elapsed: f64,
    life: f64,
    next_failure: f64,
}

impl ClientClock {
    /// Spend `d` seconds unless a failure interrupts; on failure the time up
    /// to the failure is spent and `false` is returned.
    fn advance(&mut self, d: f64) -> bool {
        if self.life + d > self.next_failure {
            self.elapsed += self.next_failure - self.life;
            self.life = self.next_failure;
            false
        } else {
            self.elapsed += d;
            self.life += d;
            true
        }
    }

    fn restart(&mut self, next_failure: f64) {
        self.life = 0.0;
        self.next_failure = next_failure;
    }
}

/// Train one client for a round, including failure injection, checkpoints,
/// recovery and the privacy mechanism.
pub fn run_client(
    round: u32,
    profile: &ClientProfile,
    data: &Dataset,
    global: &ModelParams,
    cfg: &RoundConfig,
    seed: u64,
) -> Result<ClientOutcome> {
    let id = profile.client_id;
    let key = [u64::from(round), u64::from(id)];
    let epochs = cfg.train.epochs;
    let epoch_time = data.len() as f64 * cfg.cost_per_sample / profile.compute_capacity;

    let sigma = if cfg.dp.enabled { cfg.dp.noise_scale()?.sigma } else { 0.0 };
    let per_step = cfg.dp.enabled && cfg.dp.mode == NoiseMode::PerStep;
    let clip_norm = cfg.dp.clip_norm;
    let mut perturb = |g: &mut Gradient, rng: &mut ChaCha8Rng| {
        if per_step {
            *g = add_gaussian_noise_from(&clip_update(g, clip_norm), sigma, rng);
        }
    };

    let train_stream = |attempt: u64| rng::stream(seed, Purpose::Train, &[key[0], key[1], attempt]);
    let mut fail_rng = rng::stream(seed, Purpose::Failure, &key);
    let draw_failure = |rng: &mut ChaCha8Rng| {
        if cfg.failure_injection {
            sample_failure_time_from(&cfg.weibull, rng)
        } else {
            f64::INFINITY
        }
    };

    let initial_loss = objective(global, data, cfg.train.l2)?;
    let mut run = LocalRun::new(global.clone(), train_stream(0));
    let mut clock = ClientClock {
        elapsed: 0.0,
        life: 0.0,
        next_failure: draw_failure(&mut fail_rng),
    };
    let mut attempt = 0u64;
    let mut last_checkpoint = 0.0;
    let mut saved: Option<StoredCheckpoint> = None;
    let (mut failures, mut recoveries, mut checkpoints) = (0u32, 0u32, 0u32);

    while run.epoch < epochs {
        let mut ok = clock.advance(epoch_time);
        if ok {
            run.run_epoch(data, &cfg.train, &mut perturb);
            let due = clock.elapsed - last_checkpoint >= cfg.checkpoint.interval;
            if cfg.checkpoint.enabled && run.epoch < epochs && due {
                ok = clock.advance(cfg.write_cost);
                if ok {
                    let cp = Checkpoint {
                        round,
                        client_id: id,
                        params: run.params.clone(),
                        epoch_progress: run.epoch,
                        rng_cursor: run.cursor(),
                    };
                    saved = Some(cfg.checkpoint_store.save(&cp)?);
                    checkpoints += 1;
                    last_checkpoint = clock.elapsed;
                }
            }
        }
        if ok {
            continue;
        }

        failures += 1;
        if recoveries >= cfg.max_recoveries {
            return Ok(ClientOutcome {
                client_id: id,
                update: None,
                stats: None,
                elapsed: clock.elapsed,
                failures,
                recoveries,
                checkpoints,
            });
        }
        recoveries += 1;
        if cfg.checkpoint.enabled {
            clock.elapsed += cfg.recovery_time;
            run = match &saved {
                Some(stored) => {
                    let cp = stored.load()?;
                    LocalRun::resume(cp.params, cp.epoch_progress, train_stream(0), cp.rng_cursor)
                }
                None => LocalRun::new(global.clone(), train_stream(0)),
            };
        } else {
            attempt += 1;
            run = LocalRun::new(recover_without_checkpoint(global), train_stream(attempt));
        }
        last_checkpoint = clock.elapsed;
        let next = draw_failure(&mut fail_rng);
        clock.restart(next);
    }

    let final_loss = objective(&run.params, data, cfg.train.l2)?;
    let update = if cfg.dp.enabled && !per_step {
        let delta = clip_update(&run.params.delta_from(global), clip_norm);
        let mut noise_rng = rng::stream(seed, Purpose::Noise, &key);
        global.offset_by(&add_gaussian_noise_from(&delta, sigma, &mut noise_rng))
    } else {
        run.params
    };
    Ok(ClientOutcome {
        client_id: id,
        update: Some(update),
        stats: Some(TrainStats {
            epochs_run: epochs,
            initial_loss,
            final_loss,
            samples: data.len(),
        }),
        elapsed: clock.elapsed,
        failures,
        recoveries,
        checkpoints,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Completed(RoundRecord),
    /// Nobody was available; only the clock moved.
    Skipped { round: u32 },
}

fn pick_clients(
    state: &GlobalState,
    fed: &FederatedDataset,
    sel: &SelectionConfig,
    round: u32,
) -> Result<Option<Vec<u32>>> {
    let seed = state.rng_root;
    let available = get_available_clients(&fed.profiles, round, seed);
    if available.is_empty() {
        return Ok(None);
    }
    let selection = match sel.strategy {
        SelectionStrategy::Utility => select_top_k(round, &available, &state.utilities, state.k)?,
        SelectionStrategy::Random => {
            let mut rng = rng::stream(seed, Purpose::Selection, &[u64::from(round)]);
            select_random(round, &available, state.k, &mut rng)?
        }
        SelectionStrategy::Full => select_top_k(round, &available, &state.utilities, available.len())?,
    };
    Ok(Some(selection.selected))
}

/// Execute one round and return the successor state.
pub fn run_round(
    state: &GlobalState,
    fed: &FederatedDataset,
    cfg: &RoundConfig,
    sel: &SelectionConfig,
) -> Result<(GlobalState, RoundOutcome)> {
    let round = state.round + 1;
    let mut next = state.clone();
    next.round = round;

    let Some(selected) = pick_clients(state, fed, sel, round)? else {
        next.sim_clock += cfg.idle_round_time;
        return Ok((next, RoundOutcome::Skipped { round }));
    };

    let work = |&id: &u32| {
        let i = id as usize;
        run_client(round, &fed.profiles[i], &fed.shards[i], &state.global_params, cfg, state.rng_root)
            .map_err(|e| Error::Client {
                round,
                client: id,
                source: Box::new(e),
            })
    };
    let outcomes: Vec<ClientOutcome> = if cfg.parallel {
        selected.par_iter().map(work).collect::<Result<_>>()?
    } else {
        selected.iter().map(work).collect::<Result<_>>()?
    };

    let delivered: Vec<&ClientOutcome> = outcomes.iter().filter(|o| o.update.is_some()).collect();
    if !delivered.is_empty() {
        let updates: Vec<ModelParams> = delivered
            .iter()
            .map(|o| o.update.clone().expect("filtered"))
            .collect();
        next.global_params = if cfg.weighted_aggregation {
            let weights: Vec<f64> = delivered
                .iter()
                .map(|o| fed.shards[o.client_id as usize].len() as f64)
                .collect();
            aggregate_weighted(&updates, &weights)?
        } else {
            aggregate(&updates)?
        };
    }

    let wrap = |e: Error| Error::Round {
        round,
        source: Box::new(e),
    };
    let eval = evaluate(&next.global_params, &fed.holdout).map_err(wrap)?;
    let acc = accuracy(&eval.labels, &eval.scores, 0.5).map_err(wrap)?;
    let auc = auc_roc(&eval.labels, &eval.scores).ok();
    let cost = compute_cost(&selected, &fed.profiles).map_err(wrap)?;
    let objective = compute_objective(acc, cost, sel.alpha, sel.gamma);

    let fractions = data_fractions(fed);
    let caps = capacity_norms(&fed.profiles);
    // The optimistic initial score only orders clients that have never
    // trained; a client's first observation seeds its average.
    let first_visit = SelectionConfig {
        ema_decay: 0.0,
        ..sel.clone()
    };
    for o in &delivered {
        let i = o.client_id as usize;
        let stats = o.stats.as_ref().expect("delivered clients carry stats");
        let rule = if state.participation[i] == 0 { &first_visit } else { sel };
        next.utilities[i] = compute_utility(&state.utilities[i], stats, fractions[i], caps[i], rule);
        next.participation[i] += 1;
    }

    next.accuracy_history.push(acc);
    let new_k = adapt_k(&next.accuracy_history[next.k_changed_at..], sel, next.k);
    if new_k != next.k {
        next.k = new_k;
        next.k_changed_at = next.accuracy_history.len();
    }

    let busiest = outcomes.iter().map(|o| o.elapsed).fold(0.0, f64::max);
    next.sim_clock += busiest;

    let record = RoundRecord {
        round,
        k: selected.len(),
        acc,
        loss: eval.loss,
        auc,
        objective,
        cost,
        failures: outcomes.iter().map(|o| o.failures).sum(),
        recoveries: outcomes.iter().map(|o| o.recoveries).sum(),
        excluded: outcomes
            .iter()
            .filter(|o| o.update.is_none())
            .map(|o| o.client_id)
            .collect(),
        checkpoints: outcomes.iter().map(|o| o.checkpoints).sum(),
        sim_clock: next.sim_clock,
        selected,
    };
    Ok((next, RoundOutcome::Completed(record)))
}

fn validate_federation(fed: &FederatedDataset) -> Result<()> {
    fed.validate()?;
    if fed.holdout.is_empty() {
        return Err(Error::invalid("federation has an empty holdout"));
    }
    if fed.shards.iter().any(Dataset::is_empty) {
        return Err(Error::invalid("every client shard must hold at least one row"));
    }
    for (i, p) in fed.profiles.iter().enumerate() {
        if p.client_id as usize != i {
            return Err(Error::invalid("client ids must equal their shard index"));
        }
        if !(p.compute_capacity > 0.0) || !(0.0..=1.0).contains(&p.availability_prob) {
            return Err(Error::invalid(format!("client {i} has an invalid profile")));
        }
    }
    Ok(())
}

/// Run rounds until convergence or `max_rounds`.
pub fn run_simulation(
    fed: &FederatedDataset,
    cfg: &RoundConfig,
    sel: &SelectionConfig,
    seed: u64,
) -> Result<RunReport> {
    let started = std::time::Instant::now();
    validate_federation(fed)?;
    cfg.validate()?;
    sel.validate(fed.n_clients())?;

    let mut state = GlobalState::new(fed, sel, seed);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = false;

    while state.round < cfg.max_rounds {
        let (next, outcome) = run_round(&state, fed, cfg, sel)?;
        state = next;
        match outcome {
            RoundOutcome::Completed(r) => records.push(r),
            RoundOutcome::Skipped { round } => {
                warnings.push(format!("round {round} skipped: no clients available"));
                skipped.push(round);
            }
        }
        if cfg.convergence_patience > 0
            && check_convergence(&state.accuracy_history, cfg.convergence_tol, cfg.convergence_patience)
        {
            converged = true;
            break;
        }
    }

    let most = state.participation.iter().copied().max().unwrap_or(0);
    let (epsilon_spent, delta_spent) = if cfg.dp.enabled && most > 0 {
        match sequential_budget(&cfg.dp.budget, most) {
            Ok(b) => (Some(b.epsilon), Some(b.delta)),
            Err(Error::BudgetExhausted { epsilon, delta }) => {
                warnings.push(format!(
                    "composed privacy budget exhausted: delta {delta} >= 1 after {most} releases"
                ));
                (Some(epsilon), Some(delta))
            }
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };

    let last = records.last();
    let summary = RunSummary {
        seed,
        rounds_run: state.round,
        max_rounds: cfg.max_rounds,
        sim_time: state.sim_clock,
        converged,
        final_acc: last.map(|r| r.acc),
        final_loss: last.map(|r| r.loss),
        final_auc: last.and_then(|r| r.auc),
        epsilon_spent,
        delta_spent,
        skipped_rounds: skipped,
        total_failures: records.iter().map(|r| r.failures).sum(),
        total_recoveries: records.iter().map(|r| r.recoveries).sum(),
        warnings,
        final_params: state.global_params.0.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunReport { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_federation;

    fn quiet_config() -> RoundConfig {
        RoundConfig {
            dp: DpConfig::disabled(),
            failure_injection: false,
            max_rounds: 5,
            convergence_patience: 0,
            ..Default::default()
        }
    }

    #[test]
    fn aggregate_examples() {
        let w = ModelParams(vec![0.3, -1.0]);
        assert_eq!(aggregate(&[w.clone(), w.clone(), w.clone()]).unwrap(), w);
        let two = aggregate(&[ModelParams(vec![0.0]), ModelParams(vec![2.0])]).unwrap();
        assert_eq!(two.0, vec![1.0]);
        assert!(matches!(aggregate(&[]), Err(Error::NoUpdates)));
        assert!(aggregate(&[ModelParams(vec![0.0]), ModelParams(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn weighted_aggregate() {
        let a = aggregate_weighted(
            &[ModelParams(vec![0.0]), ModelParams(vec![3.0])],
            &[2.0, 1.0],
        )
        .unwrap();
        assert_eq!(a.0, vec![1.0]);
    }

    #[test]
    fn convergence_rule() {
        assert!(!check_convergence(&[0.5, 0.5], 0.001, 3));
        assert!(!check_convergence(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.001, 3));
        assert!(check_convergence(&[0.7; 3], 0.001, 3));
        assert!(check_convergence(&[0.2, 0.7, 0.7, 0.7, 0.7], 0.001, 3));
    }

    #[test]
    fn one_round_report() {
        let fed = generate_synthetic_federation(6, 30, 2, 1.0, 3).unwrap();
        let cfg = RoundConfig {
            max_rounds: 1,
            ..quiet_config()
        };
        let sel = SelectionConfig {
            k: 3,
            k_max: 3,
            ..Default::default()
        };
        let report = run_simulation(&fed, &cfg, &sel, 1).unwrap();
        assert_eq!(report.records.len() + report.summary.skipped_rounds.len(), 1);
        assert_eq!(report.summary.rounds_run, 1);
    }

    #[test]
    fn skipped_round_moves_clock_only() {
        let mut fed = generate_synthetic_federation(3, 20, 2, 1.0, 3).unwrap();
        for p in &mut fed.profiles {
            p.availability_prob = 0.0;
        }
        let sel = SelectionConfig {
            k: 2,
            k_max: 3,
            ..Default::default()
        };
        let cfg = quiet_config();
        let state = GlobalState::new(&fed, &sel, 4);
        let (next, outcome) = run_round(&state, &fed, &cfg, &sel).unwrap();
        assert_eq!(outcome, RoundOutcome::Skipped { round: 1 });
        assert_eq!(next.global_params, state.global_params);
        assert_eq!(next.sim_clock, cfg.idle_round_time);
        assert!(next.accuracy_history.is_empty());
    }

    #[test]
    fn clock_strictly_increases() {
        let fed = generate_synthetic_federation(5, 30, 2, 1.0, 3).unwrap();
        let sel = SelectionConfig {
            k: 2,
            k_max: 5,
            ..Default::default()
        };
        let report = run_simulation(&fed, &quiet_config(), &sel, 2).unwrap();
        let clocks: Vec<f64> = report.records.iter().map(|r| r.sim_clock).collect();
        assert!(clocks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn jsonl_roundtrip() {
        let fed = generate_synthetic_federation(4, 20, 2, 1.0, 3).unwrap();
        let sel = SelectionConfig {
            k: 2,
            k_max: 4,
            ..Default::default()
        };
        let report = run_simulation(&fed, &quiet_config(), &sel, 2).unwrap();
        let text = report.to_jsonl();
        let back = RunReport::from_jsonl(&text).unwrap();
        assert_eq!(back.records, report.records);
        assert_eq!(back.to_jsonl(), text);
        let first = text.lines().next().unwrap();
        for field in ["round", "selected", "k", "acc", "loss", "auc", "objective", "cost", "failures", "recoveries", "sim_clock"] {
            assert!(first.contains(&format!("\"{field}\":")), "missing {field}");
        }
    }

    #[test]
    fn rounds_to_target_censors() {
        let fed = generate_synthetic_federation(4, 20, 2, 1.0, 3).unwrap();
        let sel = SelectionConfig {
            k: 2,
            k_max: 4,
            ..Default::default()
        };
        let report = run_simulation(&fed, &quiet_config(), &sel, 2).unwrap();
        assert_eq!(report.rounds_to_target(1.01), 6);
        assert_eq!(report.rounds_to_target(0.0), 1);
    }
}
