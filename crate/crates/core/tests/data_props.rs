use std::collections::BTreeSet;

use fedsel::data::{
    generate_synthetic_federation, partition_noniid, read_csv_dataset, split_holdout, Dataset,
};
use proptest::prelude::*;

fn max_skew(fed: &fedsel::data::FederatedDataset) -> f64 {
    let pooled = fed.pooled();
    let global = pooled.positive_fraction();
    fed.shards
        .iter()
        .map(|s| (s.positive_fraction() - global).abs())
        .fold(0.0, f64::max)
}

#[test]
fn dirichlet_limit_over_seeds() {
    for seed in 0..10 {
        let fed = generate_synthetic_federation(8, 100, 3, 1e5, seed).unwrap();
        assert!(max_skew(&fed) < 0.05, "seed {seed}: {}", max_skew(&fed));
    }
}

#[test]
fn reference_examples() {
    let fed = generate_synthetic_federation(4, 100, 2, 1e6, 7).unwrap();
    assert!(max_skew(&fed) <= 0.05);

    let fed = generate_synthetic_federation(4, 100, 2, 0.05, 7).unwrap();
    assert!(fed
        .shards
        .iter()
        .any(|s| s.positive_fraction() <= 0.1 || s.positive_fraction() >= 0.9));

    let fed = generate_synthetic_federation(1, 10, 2, 0.5, 1).unwrap();
    assert_eq!(fed.shards.len(), 1);
    assert_eq!(fed.shards[0].len(), 10);
}

#[test]
fn holdout_is_disjoint_and_sized() {
    let fed = generate_synthetic_federation(5, 40, 2, 1.0, 3).unwrap();
    let shard_rows: BTreeSet<usize> = fed.shard_rows.iter().flatten().copied().collect();
    let hold: BTreeSet<usize> = fed.holdout_rows.iter().copied().collect();
    assert!(shard_rows.is_disjoint(&hold));
    assert_eq!(fed.holdout.len(), 50);
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic_federation(6, 30, 4, 0.3, 99).unwrap();
    let b = generate_synthetic_federation(6, 30, 4, 0.3, 99).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic_federation(6, 30, 4, 0.3, 100).unwrap();
    assert_ne!(a, c);
}

#[test]
fn near_iid_partition_sizes() {
    let n = 1000;
    let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let ds = Dataset::new(1, features, labels).unwrap();
    let fed = partition_noniid(&ds, 5, 1e6, 4).unwrap();
    for s in &fed.shards {
        assert!((s.len() as f64 - 200.0).abs() <= 20.0, "{}", s.len());
    }
}

#[test]
fn csv_then_partition_then_holdout() {
    let mut text = String::from("a,b,label\n");
    for i in 0..60 {
        text.push_str(&format!("{},{},{}\n", i, 60 - i, if i % 3 == 0 { "attack" } else { "normal" }));
    }
    let ds = read_csv_dataset(text.as_bytes(), "label", &["a", "b"]).unwrap();
    assert_eq!(ds.len(), 60);
    // "attack" < "normal"
    assert_eq!(ds.label(0), 0);
    assert_eq!(ds.label(1), 1);
    let (rest, hold, rest_rows, hold_rows) = split_holdout(&ds, 0.2, 1).unwrap();
    assert_eq!(rest.len() + hold.len(), 60);
    let all: BTreeSet<usize> = rest_rows.iter().chain(&hold_rows).copied().collect();
    assert_eq!(all.len(), 60);
    let fed = partition_noniid(&rest, 4, 0.5, 2)
        .unwrap()
        .map_rows(&rest_rows)
        .unwrap()
        .with_holdout(hold, hold_rows)
        .unwrap();
    fed.validate().unwrap();
}

proptest! {
    #[test]
    fn partition_conserves_rows(m in 3usize..200, n in 1usize..10, alpha in 0.05f64..100.0, seed in any::<u64>()) {
        prop_assume!(n <= m);
        let features: Vec<f64> = (0..m).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..m).map(|i| u8::from(i * 7 % 3 == 0)).collect();
        let ds = Dataset::new(1, features, labels).unwrap();
        let fed = partition_noniid(&ds, n, alpha, seed).unwrap();
        prop_assert_eq!(fed.shards.iter().map(Dataset::len).sum::<usize>(), m);
        let rows: BTreeSet<usize> = fed.shard_rows.iter().flatten().copied().collect();
        prop_assert_eq!(rows.len(), m);
        // every row keeps its label
        for (shard, idx) in fed.shards.iter().zip(&fed.shard_rows) {
            for (k, &r) in idx.iter().enumerate() {
                prop_assert_eq!(shard.row(k)[0], r as f64);
                prop_assert_eq!(shard.label(k), ds.label(r));
            }
        }
        let again = partition_noniid(&ds, n, alpha, seed).unwrap();
        prop_assert_eq!(fed, again);
    }
}
