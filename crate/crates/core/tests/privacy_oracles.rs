use fedsel::model::Gradient;
use fedsel::privacy::{
    add_gaussian_noise, calibrate_sigma, clip_update, sequential_budget, NoiseScale, PrivacyBudget,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn sigma_formula(eps: f64, delta: f64, sens: f64) -> f64 {
    sens * (2.0 * (1.25f64 / delta).ln()).sqrt() / eps
}

#[test]
fn sigma_reference_value() {
    let s = calibrate_sigma(&PrivacyBudget::new(1.0, 1e-5).unwrap(), 1.0).unwrap();
    assert!((s.sigma - 4.8448).abs() < 1e-3, "{}", s.sigma);
    for (eps, delta, sens) in [(0.1, 1e-5, 1.0), (10.0, 1e-6, 0.5), (0.5, 1e-3, 3.0)] {
        let s = calibrate_sigma(&PrivacyBudget::new(eps, delta).unwrap(), sens).unwrap();
        assert!((s.sigma - sigma_formula(eps, delta, sens)).abs() < 1e-12);
    }
}

#[test]
fn noise_moments_match_sigma() {
    let n = 100_000;
    let sigma = 2.5;
    let noisy = add_gaussian_noise(
        &Gradient(vec![0.0; n]),
        &NoiseScale {
            sigma,
            clip_norm: 1.0,
        },
        2024,
    );
    let mean = noisy.0.iter().sum::<f64>() / n as f64;
    let var = noisy.0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "var {var}");
}

#[test]
fn noise_passes_ks_against_normal() {
    let n = 10_000;
    let sigma = 1.7;
    let mut v = add_gaussian_noise(
        &Gradient(vec![0.0; n]),
        &NoiseScale {
            sigma,
            clip_norm: 1.0,
        },
        77,
    )
    .0;
    v.sort_by(f64::total_cmp);
    let dist = Normal::new(0.0, sigma).unwrap();
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn composition_is_linear() {
    let b = PrivacyBudget::new(0.5, 1e-5).unwrap();
    let total = sequential_budget(&b, 10).unwrap();
    assert!((total.epsilon - 5.0).abs() < 1e-12);
    assert!((total.delta - 1e-4).abs() < 1e-18);
}

proptest! {
    #[test]
    fn clipped_norm_is_bounded(v in prop::collection::vec(-1e3f64..1e3, 1..30), c in 1e-3f64..100.0) {
        let g = Gradient(v);
        let out = clip_update(&g, c);
        prop_assert!(out.norm() <= c * (1.0 + 1e-12));
        if g.norm() <= c {
            prop_assert_eq!(&out, &g);
        } else {
            // direction is kept
            let ratio = out.norm() / g.norm();
            for (a, b) in out.0.iter().zip(&g.0) {
                prop_assert!((a - b * ratio).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn noise_stream_is_prefix_stable(len in 1usize..64, extra in 1usize..64, seed in any::<u64>()) {
        let scale = NoiseScale { sigma: 1.0, clip_norm: 1.0 };
        let short = add_gaussian_noise(&Gradient(vec![0.0; len]), &scale, seed);
        let long = add_gaussian_noise(&Gradient(vec![0.0; len + extra]), &scale, seed);
        prop_assert_eq!(&short.0[..], &long.0[..len]);
    }

    #[test]
    fn sigma_decreases_in_epsilon(e1 in 0.01f64..20.0, e2 in 0.01f64..20.0) {
        prop_assume!(e1 < e2);
        let s1 = calibrate_sigma(&PrivacyBudget::new(e1, 1e-5).unwrap(), 1.0).unwrap().sigma;
        let s2 = calibrate_sigma(&PrivacyBudget::new(e2, 1e-5).unwrap(), 1.0).unwrap().sigma;
        prop_assert!(s1 > s2);
    }
}
