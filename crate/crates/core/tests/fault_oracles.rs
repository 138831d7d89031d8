use fedsel::data::generate_synthetic_federation;
use fedsel::fault::{
    checkpoint_cost, checkpoint_cost_paper, fit_weibull, load_checkpoint, optimal_checkpoint_interval,
    sample_failure_time, save_checkpoint, weibull_failure_prob, weibull_quantile, Checkpoint,
    CostModel, CostModelParams, WeibullParams,
};
use fedsel::model::{LocalRun, ModelParams, TrainConfig};
use fedsel::rng::{self, Purpose};
use fedsel::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

fn w(lambda: f64, k: f64) -> WeibullParams {
    WeibullParams::new(lambda, k).unwrap()
}

#[test]
fn failure_prob_examples() {
    assert_eq!(weibull_failure_prob(0.0, &w(3.0, 2.0)).unwrap(), 0.0);
    for k in [0.5, 1.0, 2.7] {
        let p = weibull_failure_prob(4.0, &w(4.0, k)).unwrap();
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }
    // exponential CDF with rate 1
    let expo = 1.0 - (-2.0f64).exp();
    assert!((weibull_failure_prob(2.0, &w(1.0, 1.0)).unwrap() - expo).abs() < 1e-15);
    assert!(matches!(weibull_failure_prob(-1.0, &w(1.0, 1.0)), Err(Error::InvalidArgument(_))));
}

#[test]
fn quantile_at_characteristic_life() {
    let u = 1.0 - (-1.0f64).exp();
    assert!((weibull_quantile(u, &w(2.5, 1.3)) - 2.5).abs() < 1e-12);
}

#[test]
fn sample_mean_matches_gamma_formula() {
    let n = 100_000;
    for (lambda, k) in [(2.0, 1.0), (3.0, 2.0)] {
        let p = w(lambda, k);
        let mut rng = rng::stream(5, Purpose::Failure, &[]);
        let mean = (0..n)
            .map(|_| fedsel::fault::sample_failure_time_from(&p, &mut rng))
            .sum::<f64>()
            / n as f64;
        let truth = lambda * gamma(1.0 + 1.0 / k);
        assert!((mean / truth - 1.0).abs() < 0.02, "{mean} vs {truth}");
    }
}

#[test]
fn samples_pass_ks_against_cdf() {
    let n = 10_000;
    let p = w(2.0, 1.5);
    let mut rng = rng::stream(9, Purpose::Failure, &[]);
    let mut v: Vec<f64> = (0..n)
        .map(|_| fedsel::fault::sample_failure_time_from(&p, &mut rng))
        .collect();
    v.sort_by(f64::total_cmp);
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-(t / 2.0f64).powf(1.5)).exp();
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.02, "D = {d}");
}

#[test]
fn seeded_sampling_is_deterministic() {
    let p = w(2.0, 1.5);
    assert_eq!(sample_failure_time(&p, 3), sample_failure_time(&p, 3));
    assert_ne!(sample_failure_time(&p, 3), sample_failure_time(&p, 4));
}

fn draws(p: &WeibullParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::Failure, &[99]);
    (0..n).map(|_| fedsel::fault::sample_failure_time_from(p, &mut rng)).collect()
}

#[test]
fn fit_recovers_generating_parameters() {
    for seed in 0..10 {
        let fit = fit_weibull(&draws(&w(2.0, 1.5), 10_000, seed)).unwrap();
        assert!((fit.scale_lambda / 2.0 - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");
        assert!((fit.shape_k / 1.5 - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");

        let fit = fit_weibull(&draws(&w(3.0, 1.0), 10_000, seed + 100)).unwrap();
        assert!((fit.scale_lambda / 3.0 - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");
        assert!((fit.shape_k - 1.0).abs() < 0.10, "seed {seed}: {fit:?}");
    }
}

#[test]
fn fit_rejects_degenerate_input() {
    assert!(matches!(fit_weibull(&[2.0; 20]), Err(Error::Numeric(_))));
    assert!(matches!(
        fit_weibull(&[1.0; 9]),
        Err(Error::InsufficientData { needed: 10, got: 9 })
    ));
}

fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .map(|t| (t, f(t)))
        .fold((lo, f64::INFINITY), |best, (t, v)| if v < best.1 { (t, v) } else { best })
}

#[test]
fn amortized_optimum_matches_grid_example() {
    let cost = CostModelParams {
        total_time: 100.0,
        recovery_time: 1.0,
        write_cost: 0.1,
    };
    let wb = w(10.0, 1.0);
    let (lo, hi) = (0.01, 100.0);
    let sol = optimal_checkpoint_interval(&cost, &wb, CostModel::Amortized, (lo, hi)).unwrap();
    let n = 100_000;
    let (t_grid, c_grid) = grid_argmin(|t| checkpoint_cost(CostModel::Amortized, t, &cost, &wb), lo, hi, n);
    let step = (hi - lo) / (n - 1) as f64;
    assert!((sol.policy.interval - t_grid).abs() <= step, "{} vs {t_grid}", sol.policy.interval);
    assert!(sol.cost <= c_grid + 1e-12);
}

#[test]
fn paper_model_increases_on_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = rng.random_range(10.0..1000.0);
        let cost = CostModelParams {
            total_time: t,
            recovery_time: rng.random_range(0.0..10.0),
            write_cost: 0.1,
        };
        let wb = w(rng.random_range(0.5..50.0), rng.random_range(0.3..4.0));
        let (lo, hi) = (t * 1e-4, t);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let tc = lo + (hi - lo) * i as f64 / 9_999.0;
            let c = checkpoint_cost_paper(tc, &cost, &wb);
            assert!(c > prev);
            prev = c;
        }
        let sol = optimal_checkpoint_interval(&cost, &wb, CostModel::Paper, (lo, hi)).unwrap();
        assert_eq!(sol.policy.interval, lo);
        assert!(sol.warning.is_some());
    }
}

/// Pause a mini-batch run at a random epoch, round-trip it through a
/// checkpoint file, resume on a fresh copy of the stream and compare with
/// the run that never stopped.
#[test]
fn replay_from_checkpoint_is_bit_identical() {
    let fed = generate_synthetic_federation(3, 60, 4, 1.0, 21).unwrap();
    let data = &fed.shards[1];
    let cfg = TrainConfig {
        epochs: 8,
        lr: 0.2,
        batch_size: 7,
        l2: 1e-3,
    };
    // noise injected through the training stream, as per-step privacy does
    let mut perturb = |g: &mut fedsel::model::Gradient, r: &mut ChaCha8Rng| {
        for v in g.0.iter_mut() {
            *v += 0.01 * r.random::<f64>();
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let mut picker = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20u64 {
        let start = ModelParams(vec![0.1; 5]);
        let stream = || rng::stream(trial, Purpose::Train, &[1]);
        let mut full = LocalRun::new(start.clone(), stream());
        for _ in 0..cfg.epochs {
            full.run_epoch(data, &cfg, &mut perturb);
        }

        let stop = picker.random_range(1..cfg.epochs);
        let mut part = LocalRun::new(start, stream());
        for _ in 0..stop {
            part.run_epoch(data, &cfg, &mut perturb);
        }
        let path = dir.path().join(format!("t{trial}.bin"));
        save_checkpoint(
            &Checkpoint {
                round: 1,
                client_id: 1,
                params: part.params.clone(),
                epoch_progress: part.epoch,
                rng_cursor: part.cursor(),
            },
            &path,
        )
        .unwrap();
        drop(part);
        let cp = load_checkpoint(&path).unwrap();
        let mut resumed = LocalRun::resume(cp.params, cp.epoch_progress, stream(), cp.rng_cursor);
        while resumed.epoch < cfg.epochs {
            resumed.run_epoch(data, &cfg, &mut perturb);
        }
        let a: Vec<u64> = full.params.0.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = resumed.params.0.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "trial {trial} stopped after {stop}");
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let cp = Checkpoint {
        round: 4,
        client_id: 2,
        params: ModelParams((0..17).map(|i| i as f64 * 0.37 - 2.0).collect()),
        epoch_progress: 3,
        rng_cursor: 12345,
    };
    let bytes = cp.encode();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..2000 {
        let mut bad = bytes.clone();
        match rng.random_range(0..3) {
            0 => {
                let i = rng.random_range(0..bad.len());
                bad[i] ^= 1 << rng.random_range(0..8);
            }
            1 => bad.truncate(rng.random_range(0..bad.len())),
            _ => bad.push(rng.random()),
        }
        let err = Checkpoint::decode(&bad).unwrap_err();
        assert!(matches!(err, Error::Format(_) | Error::Corruption(_)), "{err:?}");
    }
}

proptest! {
    #[test]
    fn failure_prob_is_monotone(lambda in 1e-3f64..1e3, k in 0.1f64..10.0, a in 0.0f64..1e4, b in 0.0f64..1e4) {
        let p = w(lambda, k);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let pl = weibull_failure_prob(lo, &p).unwrap();
        let ph = weibull_failure_prob(hi, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph));
        prop_assert!(pl <= ph);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn amortized_optimum_within_one_grid_step(
        tr in 0.0f64..5.0,
        cw in 0.01f64..2.0,
        lambda in 1.0f64..50.0,
        k in 0.5f64..4.0,
    ) {
        let cost = CostModelParams { total_time: 200.0, recovery_time: tr, write_cost: cw };
        let wb = w(lambda, k);
        let (lo, hi) = (0.05, 200.0);
        let sol = optimal_checkpoint_interval(&cost, &wb, CostModel::Amortized, (lo, hi)).unwrap();
        let n = 100_000;
        let f = |t| checkpoint_cost(CostModel::Amortized, t, &cost, &wb);
        let (t_grid, c_grid) = grid_argmin(f, lo, hi, n);
        let step = (hi - lo) / (n - 1) as f64;
        prop_assert!(sol.cost <= c_grid + 1e-12 || (sol.policy.interval - t_grid).abs() <= step,
            "solver {} ({}) grid {} ({})", sol.policy.interval, sol.cost, t_grid, c_grid);
    }
}
