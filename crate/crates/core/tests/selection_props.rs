use std::collections::BTreeSet;

use fedsel::data::ClientProfile;
use fedsel::selection::{
    adapt_k, compute_cost, compute_objective, get_available_clients, select_top_k,
    SelectionConfig, UtilityComponents, UtilityScore,
};
use proptest::prelude::*;

fn scores(values: &[f64]) -> Vec<UtilityScore> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| UtilityScore {
            client_id: i as u32,
            value: v,
            components: UtilityComponents {
                loss_improvement: 0.0,
                data_fraction: 0.0,
                capacity_norm: 0.0,
            },
        })
        .collect()
}

fn profiles(n: usize, availability: f64) -> Vec<ClientProfile> {
    (0..n)
        .map(|i| ClientProfile {
            client_id: i as u32,
            comm_cost: 0.5 + i as f64 * 0.1,
            comp_cost: 1.0 + (i % 3) as f64,
            compute_capacity: 1.0,
            availability_prob: availability,
        })
        .collect()
}

#[test]
fn availability_fraction_converges() {
    let p = profiles(50, 0.8);
    let rounds = 1000;
    let total: usize = (1..=rounds).map(|r| get_available_clients(&p, r, 17).len()).sum();
    let frac = total as f64 / (50 * rounds) as f64;
    assert!((frac - 0.8).abs() < 0.03, "{frac}");
}

#[test]
fn availability_extremes() {
    assert_eq!(get_available_clients(&profiles(7, 1.0), 3, 1).len(), 7);
    assert!(get_available_clients(&profiles(7, 0.0), 3, 1).is_empty());
}

#[test]
fn cost_matches_naive_sum() {
    let p = profiles(10, 1.0);
    let sel = [1u32, 4, 7, 9];
    let mut naive = 0.0;
    for id in sel {
        naive += p[id as usize].comm_cost + p[id as usize].comp_cost;
    }
    assert_eq!(compute_cost(&sel, &p).unwrap(), naive);
    assert_eq!(compute_cost(&[], &p).unwrap(), 0.0);
    assert!(compute_cost(&[99], &p).is_err());
}

proptest! {
    #[test]
    fn selection_is_affine_invariant(
        values in prop::collection::vec(-5.0f64..5.0, 1..30),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
        k in 1usize..40,
        mask in any::<u64>(),
    ) {
        let n = values.len();
        let avail: BTreeSet<u32> = (0..n as u32).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!avail.is_empty());
        let base = select_top_k(1, &avail, &scores(&values), k).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let moved = select_top_k(1, &avail, &scores(&scaled), k).unwrap();
        // an affine map can merge two nearly equal values in floating point
        let distinct = {
            let mut s: Vec<f64> = scaled.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        if distinct {
            prop_assert_eq!(&base.selected, &moved.selected);
        }
        prop_assert_eq!(base.selected.len(), k.min(avail.len()));
        prop_assert!(base.selected.iter().all(|c| avail.contains(c)));
    }

    #[test]
    fn adapt_k_stays_in_bounds(
        history in prop::collection::vec(0.0f64..1.0, 0..40),
        k_min in 1usize..5,
        span in 0usize..6,
        offset in 0usize..6,
        patience in 1usize..8,
        adaptive in any::<bool>(),
    ) {
        let k_max = k_min + span;
        let k = k_min + offset.min(span);
        let cfg = SelectionConfig { k, k_min, k_max, patience, adaptive, ..Default::default() };
        let next = adapt_k(&history, &cfg, k);
        prop_assert!((k_min..=k_max).contains(&next));
        prop_assert!(next == k || next == k + 1);
        if !adaptive {
            prop_assert_eq!(next, k);
        }
    }

    #[test]
    fn objective_is_monotone(acc in 0.0f64..1.0, d in 0.0f64..0.5, cost in 0.0f64..10.0, alpha in 0.01f64..5.0, gamma in 0.01f64..5.0) {
        prop_assert!(compute_objective(acc + d, cost, alpha, gamma) >= compute_objective(acc, cost, alpha, gamma));
        prop_assert!(compute_objective(acc, cost + d, alpha, gamma) <= compute_objective(acc, cost, alpha, gamma));
    }
}
