//! FLOP, byte and memory accounting.
//!
//! Forward cost of a dense layer is `2·in·out` per sample plus one FLOP per
//! element of a non-identity activation; the loss itself is not charged.
//! Perturbation and update passes cost a fixed number of FLOPs per parameter
//! touched; random-number generation is not charged.

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::protocol::PayloadMode;
use crate::scalar::Precision;
use crate::zo::{OpCounts, SplitConfig};

/// FLOPs per parameter of one perturbation pass (sample and add).
pub const P_FLOPS_PER_PARAM: u64 = 2;
/// FLOPs per parameter and seed of one zero-order update (two multiplies, one subtract).
pub const U_FLOPS_PER_PARAM: u64 = 3;
/// FLOPs per parameter of a plain SGD update `θ ← θ − μ·∇`.
pub const SGD_FLOPS_PER_PARAM: u64 = 2;
/// A backward pass is charged as twice the forward pass.
pub const BACKWARD_FORWARD_RATIO: u64 = 2;

/// Fixed payload header: magic, version, client id, round id, mode, K, P1, P2.
pub const PAYLOAD_FIXED_HEADER_BYTES: u64 = 4 + 4 + 4 + 4 + 1 + 4 + 4 + 4;
pub const SCALAR_WIRE_BYTES: u64 = 8;
pub const SEED_WIRE_BYTES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModelParams {
    pub fw1_flops: u64,
    pub fw2_flops: u64,
    pub p_flops_per_param: u64,
    pub u_flops_per_param: u64,
    pub d1: u64,
    pub d2: u64,
}

impl CostModelParams {
    pub fn for_model(spec: &ModelSpec, batch_size: usize) -> Self {
        let (fw1, fw2) = block_forward_flops(spec, batch_size);
        let split = spec.split();
        Self {
            fw1_flops: fw1,
            fw2_flops: fw2,
            p_flops_per_param: P_FLOPS_PER_PARAM,
            u_flops_per_param: U_FLOPS_PER_PARAM,
            d1: split.d1 as u64,
            d2: split.d2 as u64,
        }
    }

    pub fn fw_flops(&self) -> u64 {
        self.fw1_flops + self.fw2_flops
    }

    pub fn d(&self) -> u64 {
        self.d1 + self.d2
    }
}

/// Per-step FLOP breakdown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlops {
    pub forward: u64,
    pub perturb: u64,
    pub update: u64,
}

impl StepFlops {
    pub fn total(&self) -> u64 {
        self.forward + self.perturb + self.update
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceKind {
    Central,
    Forward,
}

fn layer_flops(layer: &crate::model::DenseLayer, batch_size: usize) -> u64 {
    let b = batch_size as u64;
    2 * layer.input as u64 * layer.output as u64 * b + layer.nonlinearity.flops_per_element() * layer.output as u64 * b
}

/// Inference FLOPs of the whole model on a batch.
pub fn forward_flops(spec: &ModelSpec, batch_size: usize) -> u64 {
    spec.layers().iter().map(|l| layer_flops(l, batch_size)).sum()
}

/// Inference FLOPs of f₁ and f₂ separately.
pub fn block_forward_flops(spec: &ModelSpec, batch_size: usize) -> (u64, u64) {
    let (first, second) = spec.layers().split_at(spec.cut());
    (
        first.iter().map(|l| layer_flops(l, batch_size)).sum(),
        second.iter().map(|l| layer_flops(l, batch_size)).sum(),
    )
}

/// Whole-model zero-order step with `p` perturbations.
pub fn zo_step_flops_single(fw: u64, p: u64, d: u64, kind: DifferenceKind) -> StepFlops {
    let (forward, perturb) = match kind {
        DifferenceKind::Central => (2 * fw * p, 3 * p * P_FLOPS_PER_PARAM * d),
        DifferenceKind::Forward => (fw * (1 + p), 2 * p * P_FLOPS_PER_PARAM * d),
    };
    StepFlops {
        forward,
        perturb,
        update: p * U_FLOPS_PER_PARAM * d,
    }
}

/// Split-perturbation step: both blocks pay their own forward, perturbation and update costs.
pub fn zo_step_flops_split(cfg: &SplitConfig, params: &CostModelParams) -> StepFlops {
    let (p1, p2) = (cfg.p1 as u64, cfg.p2 as u64);
    StepFlops {
        forward: 2 * params.fw1_flops * p1 + 2 * params.fw2_flops * p2,
        perturb: 3 * (p1 * params.p_flops_per_param * params.d1 + p2 * params.p_flops_per_param * params.d2),
        update: p1 * params.u_flops_per_param * params.d1 + p2 * params.u_flops_per_param * params.d2,
    }
}

/// First-order SGD step: forward, backward, update.
pub fn fo_step_flops(fw: u64, d: u64) -> StepFlops {
    StepFlops {
        forward: fw * (1 + BACKWARD_FORWARD_RATIO),
        perturb: 0,
        update: SGD_FLOPS_PER_PARAM * d,
    }
}

/// Converts instrumentation counters into FLOPs.
pub fn flops_from_counts(counts: &OpCounts, params: &CostModelParams) -> StepFlops {
    let fw = params.fw_flops();
    StepFlops {
        forward: counts.block1_forwards * params.fw1_flops
            + counts.block2_forwards * params.fw2_flops
            + counts.full_forwards * fw
            + counts.backward_passes * BACKWARD_FORWARD_RATIO * fw,
        perturb: counts.perturbed_params * params.p_flops_per_param,
        update: counts.updated_params * params.u_flops_per_param + counts.sgd_updated_params * SGD_FLOPS_PER_PARAM,
    }
}

pub fn payload_header_bytes(mode: PayloadMode) -> u64 {
    match mode {
        PayloadMode::WithSeeds => PAYLOAD_FIXED_HEADER_BYTES,
        PayloadMode::ScalarsOnly => PAYLOAD_FIXED_HEADER_BYTES + SEED_WIRE_BYTES,
    }
}

pub fn payload_body_bytes(k: u64, p1: u64, p2: u64, mode: PayloadMode) -> u64 {
    let scalars = k * 2 * SCALAR_WIRE_BYTES;
    match mode {
        PayloadMode::WithSeeds => scalars + k * (p1 + p2) * SEED_WIRE_BYTES,
        PayloadMode::ScalarsOnly => scalars,
    }
}

/// Serialized size of a client payload.
pub fn payload_bytes(k: u64, p1: u64, p2: u64, mode: PayloadMode) -> u64 {
    payload_header_bytes(mode) + payload_body_bytes(k, p1, p2, mode)
}

fn layer_outputs(spec: &ModelSpec, batch_size: usize) -> Vec<u64> {
    spec.layers().iter().map(|l| (l.output * batch_size) as u64).collect()
}

/// Modeled peak memory of a split-perturbation step:
/// `d + max(max(y₁…y_{l−1}), y_l + max(y_{l+1}…y_N))` scalars, where `l` is
/// the last layer of f₁ and `yᵢ` the batch output size of layer `i`.
pub fn peak_memory_model(spec: &ModelSpec, cut: usize, batch_size: usize, precision: Precision) -> u64 {
    let y = layer_outputs(spec, batch_size);
    let d = spec.param_count() as u64;
    let before = y[..cut - 1].iter().copied().max().unwrap_or(0);
    let after = y[cut..].iter().copied().max().unwrap_or(0);
    (d + before.max(y[cut - 1] + after)) * precision.bytes()
}

/// Peak memory without a cached cut activation: `d + max(yᵢ)` scalars.
pub fn peak_memory_single_block(spec: &ModelSpec, batch_size: usize, precision: Precision) -> u64 {
    let y = layer_outputs(spec, batch_size);
    (spec.param_count() as u64 + y.iter().copied().max().unwrap_or(0)) * precision.bytes()
}

/// Backpropagation keeps parameters, gradients and every layer output.
pub fn peak_memory_backprop(spec: &ModelSpec, batch_size: usize, precision: Precision) -> u64 {
    let y: u64 = layer_outputs(spec, batch_size).iter().sum();
    (2 * spec.param_count() as u64 + y) * precision.bytes()
}

/// Size of the cached cut activation relative to the parameter count.
pub fn cut_cache_fraction(spec: &ModelSpec, batch_size: usize) -> f64 {
    (spec.cut_width() * batch_size) as f64 / spec.param_count() as f64
}

/// Cumulative cost of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub fw_flops: u64,
    pub perturb_flops: u64,
    pub update_flops: u64,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub peak_memory_bytes: u64,
}

impl CostLedger {
    pub fn charge_flops(&mut self, flops: &StepFlops) {
        self.fw_flops += flops.forward;
        self.perturb_flops += flops.perturb;
        self.update_flops += flops.update;
    }

    pub fn charge_counts(&mut self, counts: &OpCounts, params: &CostModelParams) {
        self.charge_flops(&flops_from_counts(counts, params));
    }

    pub fn add_upload(&mut self, bytes: u64) {
        self.upload_bytes += bytes;
    }

    pub fn add_download(&mut self, bytes: u64) {
        self.download_bytes += bytes;
    }

    pub fn observe_peak_memory(&mut self, bytes: u64) {
        self.peak_memory_bytes = self.peak_memory_bytes.max(bytes);
    }

    pub fn total_flops(&self) -> u64 {
        self.fw_flops + self.perturb_flops + self.update_flops
    }

    /// Combines ledgers of parallel shards.
    pub fn merge(&mut self, other: &CostLedger) {
        self.fw_flops += other.fw_flops;
        self.perturb_flops += other.perturb_flops;
        self.update_flops += other.update_flops;
        self.upload_bytes += other.upload_bytes;
        self.download_bytes += other.download_bytes;
        self.peak_memory_bytes = self.peak_memory_bytes.max(other.peak_memory_bytes);
    }

    /// True when every counter of `self` is at least the one in `earlier`.
    pub fn dominates(&self, earlier: &CostLedger) -> bool {
        self.fw_flops >= earlier.fw_flops
            && self.perturb_flops >= earlier.perturb_flops
            && self.update_flops >= earlier.update_flops
            && self.upload_bytes >= earlier.upload_bytes
            && self.download_bytes >= earlier.download_bytes
            && self.peak_memory_bytes >= earlier.peak_memory_bytes
    }
}
