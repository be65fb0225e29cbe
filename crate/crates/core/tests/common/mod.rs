#![allow(dead_code)]

use std::path::PathBuf;

use fedspzo::data::{make_blobs, ClientShard, Dataset};
use fedspzo::model::{Batch, ModelSpec, Nonlinearity};
use fedspzo::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

/// Path of a shipped config under the workspace `configs/` directory.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// MLP with 1..=3 hidden layers of random width and a random interior cut.
pub fn random_mlp<R: Rng>(rng: &mut R) -> ModelSpec {
    let input = rng.random_range(2..=10);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=16)).collect();
    let classes = rng.random_range(2..=5);
    let nonlinearity = if rng.random_bool(0.5) {
        Nonlinearity::Tanh
    } else {
        Nonlinearity::Relu
    };
    let cut = rng.random_range(1..=depth);
    ModelSpec::mlp(input, &hidden, classes, nonlinearity, Some(cut)).unwrap()
}

pub fn random_theta<T: Scalar, R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<T> {
    (0..d)
        .map(|_| T::from_f64(scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn random_batch<T: Scalar, R: Rng>(rng: &mut R, spec: &ModelSpec, rows: usize) -> Batch<T> {
    let dim = spec.input_dim();
    let inputs = (0..rows * dim)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let labels = (0..rows).map(|_| rng.random_range(0..spec.num_classes())).collect();
    Batch::new(inputs, dim, labels).unwrap()
}

/// Blobs matching the model's input width and class count.
pub fn blobs_for(spec: &ModelSpec, n: usize, seed: u64) -> Dataset {
    let mut data = make_blobs(n, spec.input_dim(), spec.num_classes(), 1.0, seed).unwrap();
    data.standardize();
    data
}

pub fn whole_shard<T: Scalar>(data: &Dataset) -> ClientShard<T> {
    let all: Vec<usize> = (0..data.len()).collect();
    data.shard(&all).unwrap()
}

/// Dense-layer FLOPs counted from the layer list: `2·in·out·b` plus one per
/// activated output element.
pub fn layer_flops_oracle(spec: &ModelSpec, layers: std::ops::Range<usize>, rows: usize) -> u64 {
    spec.layers()[layers]
        .iter()
        .map(|l| {
            let act = if l.nonlinearity == Nonlinearity::Identity { 0 } else { 1 };
            (2 * l.input * l.output * rows + act * l.output * rows) as u64
        })
        .sum()
}
