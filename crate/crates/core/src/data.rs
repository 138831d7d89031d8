//! Federated datasets: synthetic non-IID generation, CSV ingestion and
//! Dirichlet label-skew partitioning.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Fraction of all generated rows that goes to the global holdout.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Binary-labeled feature matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Build from row-major features. Fails if the shape is inconsistent, a
    /// label is not 0/1, or any feature is non-finite.
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature in row {}",
                i / dim
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Number of rows (m).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of features per row (d).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Fraction of rows labeled 1; 0 for an empty dataset.
    pub fn positive_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&y| y == 1).count() as f64 / self.len() as f64
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            dim: self.dim,
            features,
            labels,
        }
    }

    /// Concatenate datasets of equal dimension.
    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut out = Dataset::empty(dim);
        for p in parts {
            if p.dim != dim {
                return Err(Error::invalid(format!(
                    "dimension mismatch: {} vs {}",
                    p.dim, dim
                )));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Resource profile of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: u32,
    /// Communication cost per round, in abstract cost units.
    pub comm_cost: f64,
    /// Computation cost per round, in abstract cost units.
    pub comp_cost: f64,
    /// Relative speed multiplier; 1.0 is nominal.
    pub compute_capacity: f64,
    /// Probability the client is online in a given round.
    pub availability_prob: f64,
}

/// Ranges the seeded profile generator draws from, uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRanges {
    pub comm_cost: (f64, f64),
    pub comp_cost: (f64, f64),
    pub compute_capacity: (f64, f64),
    pub availability_prob: (f64, f64),
}

impl Default for ProfileRanges {
    fn default() -> Self {
        Self {
            comm_cost: (0.5, 2.0),
            comp_cost: (0.5, 2.0),
            compute_capacity: (0.5, 2.0),
            availability_prob: (0.7, 1.0),
        }
    }
}

impl ProfileRanges {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), floor: f64, ceil: f64| {
            if !(lo.is_finite() && hi.is_finite() && floor <= lo && lo <= hi && hi <= ceil) {
                Err(Error::invalid(format!("profile range `{name}` = [{lo}, {hi}] is invalid")))
            } else {
                Ok(())
            }
        };
        check("comm_cost", self.comm_cost, 0.0, f64::INFINITY)?;
        check("comp_cost", self.comp_cost, 0.0, f64::INFINITY)?;
        check("compute_capacity", self.compute_capacity, f64::MIN_POSITIVE, f64::INFINITY)?;
        check("availability_prob", self.availability_prob, 0.0, 1.0)
    }

    /// Draw `n` profiles with ids `0..n`.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<ClientProfile> {
        let mut rng = rng::stream(seed, Purpose::Profiles, &[]);
        (0..n)
            .map(|i| ClientProfile {
                client_id: i as u32,
                comm_cost: uniform(&mut rng, self.comm_cost),
                comp_cost: uniform(&mut rng, self.comp_cost),
                compute_capacity: uniform(&mut rng, self.compute_capacity),
                availability_prob: uniform(&mut rng, self.availability_prob),
            })
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Client shards, their profiles and a global evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub shards: Vec<Dataset>,
    pub profiles: Vec<ClientProfile>,
    pub holdout: Dataset,
    /// Source row indices per shard, in shard order.
    pub shard_rows: Vec<Vec<usize>>,
    /// Source row indices of the holdout.
    pub holdout_rows: Vec<usize>,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.holdout.dim()
    }

    pub fn total_rows(&self) -> usize {
        self.shards.iter().map(Dataset::len).sum()
    }

    /// All shard rows pooled in client order.
    pub fn pooled(&self) -> Dataset {
        Dataset::concat(self.dim(), &self.shards).expect("shards share one dimension")
    }

    /// Translate shard row indices through `parent`, for a federation built
    /// from a subset such as the `rest` half of [`split_holdout`].
    pub fn map_rows(mut self, parent: &[usize]) -> Result<Self> {
        for rows in &mut self.shard_rows {
            for r in rows.iter_mut() {
                *r = *parent
                    .get(*r)
                    .ok_or_else(|| Error::invalid(format!("row {r} outside parent index")))?;
            }
        }
        Ok(self)
    }

    /// Replace the holdout split.
    pub fn with_holdout(mut self, holdout: Dataset, holdout_rows: Vec<usize>) -> Result<Self> {
        if holdout.dim() != self.dim() {
            return Err(Error::invalid("holdout dimension differs from shards"));
        }
        self.holdout = holdout;
        self.holdout_rows = holdout_rows;
        Ok(self)
    }

    /// Replace a fraction `noise` of the labels of each listed client with
    /// fair coin flips. Models clients with unreliable labeling.
    pub fn corrupt_labels(&mut self, clients: &[usize], noise: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::invalid(format!("label noise {noise} outside [0, 1]")));
        }
        for &c in clients {
            let shard = self
                .shards
                .get_mut(c)
                .ok_or_else(|| Error::invalid(format!("unknown client {c}")))?;
            let mut rng = rng::stream(seed, Purpose::LabelNoise, &[c as u64]);
            for y in shard.labels.iter_mut() {
                if rng.random::<f64>() < noise {
                    *y = u8::from(rng.random::<bool>());
                }
            }
        }
        Ok(())
    }

    /// Structural invariants: matching counts, unique ids, disjoint holdout.
    pub fn validate(&self) -> Result<()> {
        if self.shards.is_empty() {
            return Err(Error::invalid("federation has no clients"));
        }
        if self.shards.len() != self.profiles.len() {
            return Err(Error::invalid("shard and profile counts differ"));
        }
        let d = self.holdout.dim();
        if self.shards.iter().any(|s| s.dim() != d) {
            return Err(Error::invalid("shards have inconsistent dimension"));
        }
        let ids: BTreeSet<u32> = self.profiles.iter().map(|p| p.client_id).collect();
        if ids.len() != self.profiles.len() {
            return Err(Error::invalid("duplicate client ids"));
        }
        let used: BTreeSet<usize> = self.shard_rows.iter().flatten().copied().collect();
        if self.holdout_rows.iter().any(|r| used.contains(r)) {
            return Err(Error::invalid("holdout overlaps a shard"));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dirichlet_alpha must be a positive real, got {alpha}"
        )));
    }
    Ok(())
}

/// Draw from a symmetric Dirichlet over `n` categories.
fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed; put all mass on one category
        let pick = rng.random_range(0..n);
        (0..n).map(|i| if i == pick { 1.0 } else { 0.0 }).collect()
    }
}

/// Two unit-covariance Gaussian clusters with means at +-`direction`.
struct ClusterSampler {
    direction: Vec<f64>,
}

impl ClusterSampler {
    fn new(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return Self {
                    direction: v.into_iter().map(|x| x / norm).collect(),
                };
            }
        }
    }

    fn push_row(&self, rng: &mut ChaCha8Rng, label: u8, out: &mut Vec<f64>) {
        let sign = if label == 1 { 1.0 } else { -1.0 };
        for &u in &self.direction {
            let z: f64 = rng.sample(StandardNormal);
            out.push(sign * u + z);
        }
    }
}

/// Generate a seeded non-IID federation of `n_clients` shards with
/// `samples_per_client` rows each.
///
/// Each client's class-1 share is drawn from a symmetric Dirichlet(`alpha`)
/// over the two labels and converted to an exact count. Features come from
/// two label-conditioned unit Gaussians centred at ±u for a random unit
/// direction u. A holdout of 20% of all rows is drawn IID with balanced
/// class prior.
pub fn generate_synthetic_federation(
    n_clients: usize,
    samples_per_client: usize,
    dim: usize,
    dirichlet_alpha: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    generate_synthetic_federation_with(
        n_clients,
        samples_per_client,
        dim,
        dirichlet_alpha,
        &ProfileRanges::default(),
        seed,
    )
}

/// [`generate_synthetic_federation`] with explicit profile ranges.
pub fn generate_synthetic_federation_with(
    n_clients: usize,
    samples_per_client: usize,
    dim: usize,
    dirichlet_alpha: f64,
    ranges: &ProfileRanges,
    seed: u64,
) -> Result<FederatedDataset> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be >= 1"));
    }
    if samples_per_client < 2 {
        return Err(Error::invalid("samples_per_client must be >= 2"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim must be >= 1"));
    }
    check_alpha(dirichlet_alpha)?;
    ranges.validate()?;

    let mut rng = rng::stream(seed, Purpose::Synth, &[]);
    let sampler = ClusterSampler::new(&mut rng, dim);

    let mut shards = Vec::with_capacity(n_clients);
    let mut shard_rows = Vec::with_capacity(n_clients);
    let mut next_row = 0usize;
    for _ in 0..n_clients {
        let p = dirichlet(&mut rng, dirichlet_alpha, 2);
        let positives = ((samples_per_client as f64) * p[1]).round() as usize;
        let mut labels: Vec<u8> = (0..samples_per_client)
            .map(|i| u8::from(i < positives))
            .collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(samples_per_client * dim);
        for &y in &labels {
            sampler.push_row(&mut rng, y, &mut features);
        }
        shards.push(Dataset {
            dim,
            features,
            labels,
        });
        shard_rows.push((next_row..next_row + samples_per_client).collect());
        next_row += samples_per_client;
    }

    let total = n_clients * samples_per_client;
    let holdout_len =
        ((total as f64) * HOLDOUT_FRACTION / (1.0 - HOLDOUT_FRACTION)).round().max(1.0) as usize;
    let mut hrng = rng::stream(seed, Purpose::Holdout, &[]);
    let mut features = Vec::with_capacity(holdout_len * dim);
    let mut labels = Vec::with_capacity(holdout_len);
    for _ in 0..holdout_len {
        let y = u8::from(hrng.random::<bool>());
        sampler.push_row(&mut hrng, y, &mut features);
        labels.push(y);
    }
    let holdout = Dataset {
        dim,
        features,
        labels,
    };

    Ok(FederatedDataset {
        shards,
        profiles: ranges.generate(n_clients, seed),
        holdout,
        shard_rows,
        holdout_rows: (next_row..next_row + holdout_len).collect(),
    })
}

/// Load a binary-labeled CSV (header row, comma-delimited, unquoted fields).
///
/// Labels map to {0, 1} with the lexicographically smaller raw value
/// becoming 0. Row order is preserved. Row indices in errors count data
/// rows from 0.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    label_column: &str,
    feature_columns: &[&str],
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_dataset(file, label_column, feature_columns)
}

/// [`load_csv_dataset`] over any reader.
pub fn read_csv_dataset(
    reader: impl std::io::Read,
    label_column: &str,
    feature_columns: &[&str],
) -> Result<Dataset> {
    if feature_columns.is_empty() {
        return Err(Error::invalid("at least one feature column is required"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::invalid(format!("cannot read CSV header: {e}")))?
        .clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let label_idx = index_of(label_column)?;
    let feature_idx: Vec<usize> = feature_columns
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<_>>()?;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| Error::invalid(format!("malformed CSV at row {row}: {e}")))?;
        for (&i, &name) in feature_idx.iter().zip(feature_columns) {
            let cell = record.get(i).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => {
                    return Err(Error::Parse {
                        row,
                        column: name.to_string(),
                        value: cell.to_string(),
                    })
                }
            }
        }
        raw_labels.push(record.get(label_idx).unwrap_or("").trim().to_string());
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    if distinct.len() != 2 {
        return Err(Error::UnsupportedLabels {
            found: distinct.into_iter().map(str::to_string).collect(),
        });
    }
    let positive = *distinct.iter().next_back().expect("two values");
    let labels = raw_labels.iter().map(|l| u8::from(l == positive)).collect();
    Dataset::new(feature_columns.len(), features, labels)
}

/// Split off a seeded random holdout of `fraction` of the rows. Returns
/// `(rest, holdout, rest_rows, holdout_rows)`, rows ascending within each.
pub fn split_holdout(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng::stream(seed, Purpose::Holdout, &[]));
    let n_hold = ((dataset.len() as f64) * fraction).round() as usize;
    let (hold, rest) = idx.split_at(n_hold);
    let mut hold = hold.to_vec();
    let mut rest = rest.to_vec();
    hold.sort_unstable();
    rest.sort_unstable();
    Ok((dataset.select(&rest), dataset.select(&hold), rest, hold))
}

/// Partition every row of `dataset` over `n_clients` shards with Dirichlet
/// label skew.
///
/// For each label, the rows of that label are shuffled and split across
/// clients in proportions drawn from a symmetric Dirichlet(`alpha`). A
/// client left empty receives one row from the currently largest shard, so
/// every shard is non-empty. The holdout of the result is empty; attach one
/// with [`FederatedDataset::with_holdout`].
pub fn partition_noniid(
    dataset: &Dataset,
    n_clients: usize,
    dirichlet_alpha: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    partition_noniid_with(dataset, n_clients, dirichlet_alpha, &ProfileRanges::default(), seed)
}

/// [`partition_noniid`] with explicit profile ranges.
pub fn partition_noniid_with(
    dataset: &Dataset,
    n_clients: usize,
    dirichlet_alpha: f64,
    ranges: &ProfileRanges,
    seed: u64,
) -> Result<FederatedDataset> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be >= 1"));
    }
    if n_clients > dataset.len() {
        return Err(Error::invalid(format!(
            "cannot split {} rows across {} clients",
            dataset.len(),
            n_clients
        )));
    }
    check_alpha(dirichlet_alpha)?;
    ranges.validate()?;

    let mut rng = rng::stream(seed, Purpose::Partition, &[]);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..=1u8 {
        let mut rows: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        rows.shuffle(&mut rng);
        let props = dirichlet(&mut rng, dirichlet_alpha, n_clients);
        let counts = apportion(rows.len(), &props);
        let mut start = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignment[client].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }
    // guarantee non-empty shards
    for client in 0..n_clients {
        if assignment[client].is_empty() {
            let donor = (0..n_clients)
                .max_by_key(|&c| (assignment[c].len(), std::cmp::Reverse(c)))
                .expect("n_clients >= 1");
            let row = assignment[donor].pop().expect("donor has rows since m >= n");
            assignment[client].push(row);
        }
    }
    for rows in assignment.iter_mut() {
        rows.sort_unstable();
    }

    Ok(FederatedDataset {
        shards: assignment.iter().map(|r| dataset.select(r)).collect(),
        profiles: ranges.generate(n_clients, seed),
        holdout: Dataset::empty(dataset.dim()),
        shard_rows: assignment,
        holdout_rows: Vec::new(),
    })
}

/// Largest-remainder apportionment of `total` items by `props`.
fn apportion(total: usize, props: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
