//! Desk-scale datasets: synthetic blobs, CSV ingestion, train/test splits and
//! client partitioning.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::scalar::Scalar;

/// Row-major feature matrix with dense class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::config("feature matrix does not match n × dim"));
        }
        if labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::config("label outside 0..num_classes"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("features must be finite"));
        }
        Ok(Self {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Per-feature zero mean and unit variance; constant features are only centered.
    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        for j in 0..self.dim {
            let mean = (0..self.len()).map(|i| self.features[i * self.dim + j]).sum::<f64>() / n;
            let var = (0..self.len())
                .map(|i| (self.features[i * self.dim + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let v = &mut self.features[i * self.dim + j];
                *v = (*v - mean) / std;
            }
        }
    }

    /// Gathers the given rows into a model batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend(self.row(i).iter().map(|&v| T::from_f64(v)));
        }
        Batch::new(inputs, self.dim, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn shard<T: Scalar>(&self, indices: &[usize]) -> Result<ClientShard<T>> {
        if indices.is_empty() {
            return Err(Error::config("client shard must not be empty"));
        }
        Ok(ClientShard {
            data: self.batch(indices)?,
        })
    }
}

/// One client's local data, stored in model precision.
#[derive(Clone, Debug)]
pub struct ClientShard<T> {
    data: Batch<T>,
}

impl<T: Scalar> ClientShard<T> {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn all(&self) -> &Batch<T> {
        &self.data
    }

    /// `batch_size` distinct rows, or every row when the shard is smaller.
    pub fn sample_batch<R: Rng>(&self, rng: &mut R, batch_size: usize) -> Batch<T> {
        let n = self.len();
        let rows: Vec<usize> = if n <= batch_size {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, batch_size).into_vec()
        };
        let dim = self.data.dim;
        let mut inputs = Vec::with_capacity(rows.len() * dim);
        for &r in &rows {
            inputs.extend_from_slice(&self.data.inputs[r * dim..(r + 1) * dim]);
        }
        Batch {
            inputs,
            dim,
            labels: rows.iter().map(|&r| self.data.labels[r]).collect(),
        }
    }
}

/// Gaussian clusters with class means drawn from `N(0, I)` and isotropic noise `spread`.
/// Labels are assigned round-robin and then shuffled, so class counts differ by at most one.
pub fn make_blobs(n: usize, dim: usize, num_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || n < num_classes || dim == 0 {
        return Err(Error::config(format!(
            "blobs need n ≥ classes ≥ 1 and dim ≥ 1 (n={n}, classes={num_classes}, dim={dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread must be finite and non-negative, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<f64> = (0..num_classes * dim).map(|_| unit.sample(&mut rng)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * dim);
    for &y in &labels {
        for j in 0..dim {
            features.push(means[y * dim + j] + spread * unit.sample(&mut rng));
        }
    }
    Dataset::new(features, dim, labels, num_classes)
}

fn csv_error(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

/// Loads a comma-separated file with a header row. Every column except
/// `label_column` must be numeric. Labels are re-indexed densely in sorted
/// order (numeric order when all labels parse as integers).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(csv_error(path, 1, "missing header row"));
    }
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| csv_error(path, 1, format!("missing label column `{label_column}`")))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(csv_error(path, 1, "no feature columns"));
    }
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| csv_error(path, line, e.to_string()))?;
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                csv_error(path, line, format!("non-numeric value `{field}` in column `{}`", &headers[col]))
            })?;
            if !v.is_finite() {
                return Err(csv_error(path, line, format!("non-finite value in column `{}`", &headers[col])));
            }
            features.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(csv_error(path, 1, "file has no data rows"));
    }
    let numeric: Option<Vec<i64>> = raw_labels.iter().map(|l| l.parse().ok()).collect();
    let labels: Vec<usize> = match numeric {
        Some(values) => {
            let index: BTreeMap<i64, usize> = values
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            values.iter().map(|v| index[v]).collect()
        }
        None => {
            let index: BTreeMap<&str, usize> = raw_labels
                .iter()
                .map(String::as_str)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            raw_labels.iter().map(|v| index[v.as_str()]).collect()
        }
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, dim, labels, num_classes)
}

/// Writes features as `f0..f{dim-1}` plus an integer `label` column.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    writer.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(dataset.labels()[i].to_string());
        writer.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Held-out split: `round(fraction · n_c)` samples of each class go to the test set.
/// Both index lists are returned in ascending order.
pub fn stratified_split(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config(format!("test fraction must lie in [0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
}

/// Client assignment of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub assignment: Vec<u32>,
    pub n_clients: usize,
    pub scheme: PartitionScheme,
}

impl PartitionPlan {
    /// Sample indices per client, ascending.
    pub fn client_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clients];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }
}

const DIRICHLET_MAX_ATTEMPTS: usize = 10_000;

/// Assigns every sample to exactly one client.
///
/// `Iid` shuffles and deals samples round-robin (sizes differ by at most one).
/// `Dirichlet` draws per-class client proportions from `Dir(α)` and resamples
/// until no client is empty.
pub fn partition(labels: &[usize], n_clients: usize, scheme: PartitionScheme, seed: u64) -> Result<PartitionPlan> {
    let n = labels.len();
    if n_clients == 0 || n_clients > n {
        return Err(Error::config(format!("cannot split {n} samples across {n_clients} clients")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut assignment = vec![0u32; n];
            for (pos, &i) in order.iter().enumerate() {
                assignment[i] = (pos % n_clients) as u32;
            }
            assignment
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config(format!("Dirichlet α must be positive, got {alpha}")));
            }
            dirichlet_assignment(labels, n_clients, alpha, &mut rng)?
        }
    };
    Ok(PartitionPlan {
        assignment,
        n_clients,
        scheme,
    })
}

fn dirichlet_assignment(labels: &[usize], n_clients: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let by_class: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    for _ in 0..DIRICHLET_MAX_ATTEMPTS {
        let mut assignment = vec![0u32; labels.len()];
        let mut sizes = vec![0usize; n_clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                // every gamma draw underflowed; fall back to a single random client
                weights = vec![0.0; n_clients];
                weights[rng.random_range(0..n_clients)] = 1.0;
            } else {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            let mut shuffled = members.clone();
            shuffled.shuffle(rng);
            let m = shuffled.len();
            let mut start = 0;
            let mut cumulative = 0.0;
            for (client, w) in weights.iter().enumerate() {
                cumulative += w;
                let end = if client + 1 == n_clients {
                    m
                } else {
                    ((cumulative * m as f64).round() as usize).clamp(start, m)
                };
                for &i in &shuffled[start..end] {
                    assignment[i] = client as u32;
                }
                sizes[client] += end - start;
                start = end;
            }
        }
        if sizes.iter().all(|&s| s > 0) {
            return Ok(assignment);
        }
    }
    Err(Error::config(format!(
        "Dirichlet partition left a client empty after {DIRICHLET_MAX_ATTEMPTS} attempts"
    )))
}
