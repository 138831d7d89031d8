//! Client-side model: L2-regularized logistic regression trained with
//! mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Flat parameter vector: `d` weights followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim + 1])
    }

    /// Feature dimension this vector serves.
    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Linear score `w·x + b`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut z = 0.0;
        for j in 0..d {
            z += self.0[j] * x[j];
        }
        z + self.0[d]
    }

    /// `self - base`, elementwise.
    pub fn delta_from(&self, base: &ModelParams) -> Gradient {
        Gradient(self.0.iter().zip(&base.0).map(|(a, b)| a - b).collect())
    }

    /// `self + delta`, elementwise.
    pub fn offset_by(&self, delta: &Gradient) -> ModelParams {
        ModelParams(self.0.iter().zip(&delta.0).map(|(a, b)| a + b).collect())
    }
}

/// Vector of the same length as [`ModelParams`]; used both for gradients and
/// for the parameter delta a client reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs_run: u32,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub samples: usize,
}

/// Hyperparameters of one local training pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr: f64,
    /// Rows per step; values `>= m` mean full-batch descent.
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.1,
            batch_size: usize::MAX,
            l2: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr must be a nonnegative real"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be a nonnegative real"));
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_dims(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.len() != data.dim() + 1 {
        return Err(Error::invalid(format!(
            "parameter length {} does not match feature dimension {} + bias",
            params.len(),
            data.dim()
        )));
    }
    Ok(())
}

fn l2_penalty(params: &ModelParams, l2: f64) -> f64 {
    let d = params.dim();
    0.5 * l2 * params.0[..d].iter().map(|w| w * w).sum::<f64>()
}

/// Mean log-loss plus `l2/2 · ‖w‖²` (bias excluded).
pub fn objective(params: &ModelParams, data: &Dataset, l2: f64) -> Result<f64> {
    check_dims(params, data)?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let z = params.logit(data.row(i));
        total += softplus(z) - f64::from(data.label(i)) * z;
    }
    Ok(total / data.len() as f64 + l2_penalty(params, l2))
}

fn gradient_over(params: &ModelParams, data: &Dataset, rows: impl Iterator<Item = usize>, l2: f64) -> Gradient {
    let d = params.dim();
    let mut g = vec![0.0; d + 1];
    let mut count = 0usize;
    for i in rows {
        let x = data.row(i);
        let r = sigmoid(params.logit(x)) - f64::from(data.label(i));
        for j in 0..d {
            g[j] += r * x[j];
        }
        g[d] += r;
        count += 1;
    }
    let m = count as f64;
    for j in 0..d {
        g[j] = g[j] / m + l2 * params.0[j];
    }
    g[d] /= m;
    Gradient(g)
}

/// Exact mean gradient of [`objective`] over all rows.
pub fn compute_gradient(params: &ModelParams, data: &Dataset, l2: f64) -> Result<Gradient> {
    check_dims(params, data)?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(gradient_over(params, data, 0..data.len(), l2))
}

/// In-progress local training pass that can be paused at epoch boundaries
/// and resumed from `(params, epoch, rng cursor)`.
#[derive(Debug, Clone)]
pub struct LocalRun {
    pub params: ModelParams,
    pub epoch: u32,
    rng: ChaCha8Rng,
}

impl LocalRun {
    pub fn new(params: ModelParams, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            epoch: 0,
            rng,
        }
    }

    /// Rebuild a paused run. `rng` must be the stream the run was started
    /// with; it is repositioned to `cursor`.
    pub fn resume(params: ModelParams, epoch: u32, mut rng: ChaCha8Rng, cursor: u64) -> Self {
        rng::seek(&mut rng, cursor);
        Self { params, epoch, rng }
    }

    pub fn cursor(&self) -> u64 {
        rng::cursor(&self.rng)
    }

    /// One pass over `data`. `perturb` sees every mini-batch gradient before
    /// the step is applied, with access to the run's stream.
    pub fn run_epoch<F>(&mut self, data: &Dataset, cfg: &TrainConfig, perturb: &mut F)
    where
        F: FnMut(&mut Gradient, &mut ChaCha8Rng),
    {
        let m = data.len();
        if cfg.batch_size >= m {
            let mut g = gradient_over(&self.params, data, 0..m, cfg.l2);
            perturb(&mut g, &mut self.rng);
            self.step(&g, cfg.lr);
        } else {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut self.rng);
            for batch in order.chunks(cfg.batch_size) {
                let mut g = gradient_over(&self.params, data, batch.iter().copied(), cfg.l2);
                perturb(&mut g, &mut self.rng);
                self.step(&g, cfg.lr);
            }
        }
        self.epoch += 1;
    }

    fn step(&mut self, g: &Gradient, lr: f64) {
        for (w, gj) in self.params.0.iter_mut().zip(&g.0) {
            *w -= lr * gj;
        }
    }
}

/// Train from `params` for `epochs` passes. Full-batch passes (batch size
/// at least the row count) consume no randomness; smaller batches reshuffle
/// every epoch from the stream seeded by `rng_seed`.
pub fn local_train(
    params: &ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<(ModelParams, TrainStats)> {
    cfg.validate()?;
    let initial_loss = objective(params, data, cfg.l2)?;
    let mut run = LocalRun::new(params.clone(), rng::stream(rng_seed, Purpose::Train, &[]));
    for _ in 0..cfg.epochs {
        run.run_epoch(data, cfg, &mut |_, _| {});
    }
    let final_loss = objective(&run.params, data, cfg.l2)?;
    Ok((
        run.params,
        TrainStats {
            epochs_run: cfg.epochs,
            initial_loss,
            final_loss,
            samples: data.len(),
        },
    ))
}

/// Holdout evaluation: unregularized mean log-loss plus per-row class-1
/// probabilities aligned with the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn evaluate(params: &ModelParams, data: &Dataset) -> Result<Evaluation> {
    check_dims(params, data)?;
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let z = params.logit(data.row(i));
        loss += softplus(z) - f64::from(data.label(i)) * z;
        scores.push(sigmoid(z));
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        scores,
        labels: data.labels().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_federation;

    fn one_row() -> Dataset {
        Dataset::new(1, vec![1.0], vec![1]).unwrap()
    }

    #[test]
    fn hand_evaluated_gradient() {
        let g = compute_gradient(&ModelParams::zeros(1), &one_row(), 0.0).unwrap();
        assert_eq!(g.0, vec![-0.5, -0.5]);
    }

    #[test]
    fn symmetric_data_zero_weight_gradient() {
        // each class holds both x and -x
        let ds = Dataset::new(2, vec![1.0, 2.0, -1.0, -2.0, 0.5, -3.0, -0.5, 3.0], vec![1, 1, 0, 0]).unwrap();
        let g = compute_gradient(&ModelParams::zeros(2), &ds, 0.3).unwrap();
        assert_eq!(&g.0[..2], &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let err = compute_gradient(&ModelParams::zeros(3), &one_row(), 0.0);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        assert!(evaluate(&ModelParams::zeros(3), &one_row()).is_err());
    }

    #[test]
    fn zero_lr_is_identity() {
        let fed = generate_synthetic_federation(1, 40, 3, 1.0, 2).unwrap();
        let p = ModelParams(vec![0.1, -0.2, 0.3, 0.05]);
        let cfg = TrainConfig { epochs: 3, lr: 0.0, batch_size: 7, l2: 0.01 };
        let (out, stats) = local_train(&p, &fed.shards[0], &cfg, 5).unwrap();
        assert_eq!(out, p);
        assert_eq!(stats.samples, 40);
        assert_eq!(stats.epochs_run, 3);
    }

    #[test]
    fn full_batch_descends() {
        let fed = generate_synthetic_federation(1, 200, 2, 1.0, 4).unwrap();
        let cfg = TrainConfig { epochs: 50, lr: 0.1, batch_size: usize::MAX, l2: 0.0 };
        let (_, stats) = local_train(&ModelParams::zeros(2), &fed.shards[0], &cfg, 0).unwrap();
        assert!(stats.final_loss <= stats.initial_loss);
    }

    #[test]
    fn minibatch_is_deterministic() {
        let fed = generate_synthetic_federation(1, 64, 2, 1.0, 4).unwrap();
        let cfg = TrainConfig { epochs: 4, lr: 0.2, batch_size: 10, l2: 0.01 };
        let a = local_train(&ModelParams::zeros(2), &fed.shards[0], &cfg, 17).unwrap();
        let b = local_train(&ModelParams::zeros(2), &fed.shards[0], &cfg, 17).unwrap();
        let c = local_train(&ModelParams::zeros(2), &fed.shards[0], &cfg, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = TrainConfig::default();
        assert!(local_train(&ModelParams::zeros(2), &Dataset::empty(2), &cfg, 0).is_err());
    }

    #[test]
    fn zero_params_score_half() {
        let fed = generate_synthetic_federation(1, 30, 2, 1.0, 4).unwrap();
        let ev = evaluate(&ModelParams::zeros(2), &fed.shards[0]).unwrap();
        assert_eq!(ev.scores.len(), 30);
        assert!(ev.scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let fed = generate_synthetic_federation(1, 50, 2, 1.0, 4).unwrap();
        let data = &fed.shards[0];
        let cfg = TrainConfig { epochs: 6, lr: 0.3, batch_size: 8, l2: 0.0 };
        let start = || rng::stream(3, Purpose::Train, &[]);
        let mut full = LocalRun::new(ModelParams::zeros(2), start());
        for _ in 0..6 {
            full.run_epoch(data, &cfg, &mut |_, _| {});
        }
        let mut part = LocalRun::new(ModelParams::zeros(2), start());
        for _ in 0..2 {
            part.run_epoch(data, &cfg, &mut |_, _| {});
        }
        let (p, e, c) = (part.params.clone(), part.epoch, part.cursor());
        let mut resumed = LocalRun::resume(p, e, start(), c);
        for _ in 2..6 {
            resumed.run_epoch(data, &cfg, &mut |_, _| {});
        }
        assert_eq!(resumed.params, full.params);
    }
}
