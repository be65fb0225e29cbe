//! Zero-order gradient estimators.
//!
//! All estimators perturb θ in place and restore it before returning; the
//! perturbation direction is regenerated from its seed every time it is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, BlockSplit, CutActivation, ModelSpec};
use crate::perturb::{perturb_in_place, update_in_place, PerturbationSpec, Seed, SeedSource};
use crate::scalar::Scalar;

/// A loss over a flat parameter vector.
pub trait Objective<T: Scalar> {
    type Batch;

    fn dim(&self) -> usize;
    fn loss(&self, theta: &[T], batch: &Self::Batch) -> Result<f64>;
}

/// A loss factored as `f₂(θ₂; f₁(θ₁; batch))`.
pub trait SplitObjective<T: Scalar> {
    type Batch;
    type Cache;

    fn block_split(&self) -> BlockSplit;
    fn forward_block1(&self, theta1: &[T], batch: &Self::Batch) -> Result<Self::Cache>;
    fn forward_block2(&self, theta2: &[T], cache: &Self::Cache, batch: &Self::Batch) -> Result<f64>;
}

impl<T: Scalar> Objective<T> for ModelSpec {
    type Batch = Batch<T>;

    fn dim(&self) -> usize {
        self.param_count()
    }

    fn loss(&self, theta: &[T], batch: &Batch<T>) -> Result<f64> {
        self.forward_loss(theta, batch)
    }
}

impl<T: Scalar> SplitObjective<T> for ModelSpec {
    type Batch = Batch<T>;
    type Cache = CutActivation<T>;

    fn block_split(&self) -> BlockSplit {
        self.split()
    }

    fn forward_block1(&self, theta1: &[T], batch: &Batch<T>) -> Result<CutActivation<T>> {
        ModelSpec::forward_block1(self, theta1, batch)
    }

    fn forward_block2(&self, theta2: &[T], cache: &CutActivation<T>, batch: &Batch<T>) -> Result<f64> {
        ModelSpec::forward_block2(self, theta2, cache, &batch.labels)
    }
}

/// Instrumentation counters filled in by the estimators and updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub full_forwards: u64,
    pub block1_forwards: u64,
    pub block2_forwards: u64,
    pub full_perturb_passes: u64,
    pub block1_perturb_passes: u64,
    pub block2_perturb_passes: u64,
    /// Parameters touched by all perturbation passes.
    pub perturbed_params: u64,
    pub update_passes: u64,
    /// Parameters touched by all update passes.
    pub updated_params: u64,
    /// First-order baseline: backward passes and SGD-updated parameters.
    pub backward_passes: u64,
    pub sgd_updated_params: u64,
}

impl OpCounts {
    pub fn merge(&mut self, other: &OpCounts) {
        self.full_forwards += other.full_forwards;
        self.block1_forwards += other.block1_forwards;
        self.block2_forwards += other.block2_forwards;
        self.full_perturb_passes += other.full_perturb_passes;
        self.block1_perturb_passes += other.block1_perturb_passes;
        self.block2_perturb_passes += other.block2_perturb_passes;
        self.perturbed_params += other.perturbed_params;
        self.update_passes += other.update_passes;
        self.updated_params += other.updated_params;
        self.backward_passes += other.backward_passes;
        self.sgd_updated_params += other.sgd_updated_params;
    }
}

#[derive(Clone, Copy)]
enum Block {
    Full,
    First,
    Second,
}

fn counted_perturb<T: Scalar>(theta: &mut [T], seed: Seed, scale: f64, block: Block, counts: &mut OpCounts) -> Result<()> {
    perturb_in_place(theta, PerturbationSpec::new(seed, scale))?;
    match block {
        Block::Full => counts.full_perturb_passes += 1,
        Block::First => counts.block1_perturb_passes += 1,
        Block::Second => counts.block2_perturb_passes += 1,
    }
    counts.perturbed_params += theta.len() as u64;
    Ok(())
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("non-finite loss {loss}")))
    }
}

/// Checks `‖after − before‖∞ ≤ tol·(1 + ‖before‖∞)`.
#[cfg(debug_assertions)]
fn check_restored<T: Scalar>(before: &[T], after: &[T]) -> Result<()> {
    let scale = 1.0 + before.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let worst = before
        .iter()
        .zip(after)
        .fold(0.0f64, |m, (a, b)| m.max((a.as_f64() - b.as_f64()).abs()));
    if worst <= T::restore_tolerance() * scale {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "θ not restored after perturbation cycle (max deviation {worst:e})"
        )))
    }
}

/// Snapshot of θ used to verify restoration; only taken in debug builds.
struct RestoreGuard<T> {
    #[cfg(debug_assertions)]
    snapshot: Vec<T>,
    #[cfg(not(debug_assertions))]
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> RestoreGuard<T> {
    #[allow(unused_variables)]
    fn new(theta: &[T]) -> Self {
        Self {
            #[cfg(debug_assertions)]
            snapshot: theta.to_vec(),
            #[cfg(not(debug_assertions))]
            _marker: std::marker::PhantomData,
        }
    }

    #[allow(unused_variables)]
    fn check(&self, theta: &[T]) -> Result<()> {
        #[cfg(debug_assertions)]
        check_restored(&self.snapshot, theta)?;
        Ok(())
    }
}

/// `g = [L(θ+εz) − L(θ−εz)] / 2ε` via the `(+ε, −2ε, +ε)` cycle.
pub fn projected_gradient_central<T, O>(
    objective: &O,
    theta: &mut [T],
    batch: &O::Batch,
    seed: Seed,
    eps: f64,
    counts: &mut OpCounts,
) -> Result<f64>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("ε must be positive, got {eps}")));
    }
    let guard = RestoreGuard::new(theta);
    counted_perturb(theta, seed, eps, Block::Full, counts)?;
    let plus = finite_loss(objective.loss(theta, batch)?)?;
    counted_perturb(theta, seed, -2.0 * eps, Block::Full, counts)?;
    let minus = finite_loss(objective.loss(theta, batch)?)?;
    counted_perturb(theta, seed, eps, Block::Full, counts)?;
    counts.full_forwards += 2;
    guard.check(theta)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// `g = [L(θ+εz) − L(θ)] / ε` given the precomputed unperturbed loss.
pub fn projected_gradient_forward<T, O>(
    objective: &O,
    theta: &mut [T],
    batch: &O::Batch,
    seed: Seed,
    eps: f64,
    base_loss: f64,
    counts: &mut OpCounts,
) -> Result<f64>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("ε must be positive, got {eps}")));
    }
    let guard = RestoreGuard::new(theta);
    counted_perturb(theta, seed, eps, Block::Full, counts)?;
    let plus = finite_loss(objective.loss(theta, batch)?)?;
    counted_perturb(theta, seed, -eps, Block::Full, counts)?;
    counts.full_forwards += 1;
    guard.check(theta)?;
    Ok((plus - base_loss) / eps)
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `a − b` exactly, rounding error included.
    fn add_difference(&mut self, a: f64, b: f64) {
        let d = a - b;
        let z = d - a;
        let err = (a - (d - z)) + (-b - z);
        self.add(d);
        self.add(err);
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Projected gradient of θ₁ from the f₂ losses collected under `+z₁` and `−z₁`:
/// `(1/4Pₛ²) Σₖ Σₗ (L⁺(l) − L⁻(k)) / 2ε` over the `2Pₛ` entries of each vector.
///
/// The pair differences are accumulated with compensation, so the result keeps
/// full relative precision when the two loss means nearly cancel.
pub fn g1_from_losses(lplus: &[f64], lminus: &[f64], eps: f64, ps: usize) -> Result<f64> {
    let n = 2 * ps;
    if ps == 0 || lplus.len() != n || lminus.len() != n {
        return Err(Error::contract(format!(
            "loss vectors must have length 2·Pₛ = {n}, got {} and {}",
            lplus.len(),
            lminus.len()
        )));
    }
    let mut total = CompensatedSum::default();
    for &lm in lminus {
        for &lp in lplus {
            total.add_difference(lp, lm);
        }
    }
    Ok(total.value() / (2.0 * eps) / (4 * ps * ps) as f64)
}

/// Perturbation counts and step sizes of one split-perturbation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub p1: usize,
    pub p2: usize,
    pub eps: f64,
    pub mu: f64,
}

impl SplitConfig {
    pub fn new(p1: usize, p2: usize, eps: f64, mu: f64) -> Result<Self> {
        let cfg = Self { p1, p2, eps, mu };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1 == 0 {
            return Err(Error::config("P1 must be at least 1"));
        }
        if self.p2 == 0 || !self.p2.is_multiple_of(2 * self.p1) {
            return Err(Error::config(format!(
                "P2 = {} must equal 2·P1·Ps for an integer Ps ≥ 1 (P1 = {})",
                self.p2, self.p1
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("ε must be positive, got {}", self.eps)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!("μ must be positive, got {}", self.mu)));
        }
        Ok(())
    }

    /// Inner θ₂ perturbations per f₁ direction.
    pub fn ps(&self) -> usize {
        self.p2 / (2 * self.p1)
    }
}

/// Projected-gradient scalars and seeds of one local step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub g1: f64,
    pub g2: f64,
    pub s1: Vec<Seed>,
    pub s2: Vec<Seed>,
}

/// One f₁ forward in direction `eps1` followed by `Pₛ` central cycles on θ₂.
/// Writes `(loss⁺, loss⁻)` pairs to `losses[2j], losses[2j+1]` and returns
/// the sum of the inner projected gradients.
#[allow(clippy::too_many_arguments)]
fn split_forward<T, O>(
    objective: &O,
    theta1: &mut [T],
    theta2: &mut [T],
    batch: &O::Batch,
    s1: Seed,
    eps1: f64,
    eps2: f64,
    losses: &mut [f64],
    s2_list: &mut Vec<Seed>,
    shift: Seed,
    seeds: &mut dyn SeedSource,
    counts: &mut OpCounts,
) -> Result<f64>
where
    T: Scalar,
    O: SplitObjective<T> + ?Sized,
{
    counted_perturb(theta1, s1, eps1, Block::First, counts)?;
    let y_l = objective.forward_block1(theta1, batch)?;
    counts.block1_forwards += 1;
    let mut g = 0.0;
    for j in 0..losses.len() / 2 {
        let s2 = seeds.next_seed().shifted(shift);
        counted_perturb(theta2, s2, eps2, Block::Second, counts)?;
        let plus = finite_loss(objective.forward_block2(theta2, &y_l, batch)?)?;
        counted_perturb(theta2, s2, -2.0 * eps2, Block::Second, counts)?;
        let minus = finite_loss(objective.forward_block2(theta2, &y_l, batch)?)?;
        counted_perturb(theta2, s2, eps2, Block::Second, counts)?;
        counts.block2_forwards += 2;
        g += (plus - minus) / (2.0 * eps2);
        losses[2 * j] = plus;
        losses[2 * j + 1] = minus;
        s2_list.push(s2);
    }
    Ok(g)
}

/// Split-perturbation gradient estimate for one batch.
///
/// For each of the `P1` outer seeds: f₁ is run once under `+εz₁` and once
/// under `−εz₁`, each time followed by `Pₛ` central-difference cycles on θ₂
/// that reuse the cached cut activation (negative-direction inner seeds are
/// shifted by a fresh draw). θ is restored before returning; no update is applied.
pub fn spzo_step<T, O>(
    objective: &O,
    theta: &mut [T],
    batch: &O::Batch,
    cfg: &SplitConfig,
    seeds: &mut dyn SeedSource,
    counts: &mut OpCounts,
) -> Result<StepRecord>
where
    T: Scalar,
    O: SplitObjective<T> + ?Sized,
{
    cfg.validate()?;
    let split = objective.block_split();
    if theta.len() != split.d() {
        return Err(Error::config(format!(
            "θ has {} parameters, split model expects {}",
            theta.len(),
            split.d()
        )));
    }
    let guard = RestoreGuard::new(theta);
    let (theta1, theta2) = theta.split_at_mut(split.d1);
    let ps = cfg.ps();
    let eps = cfg.eps;
    let mut lplus = vec![0.0; 2 * ps];
    let mut lminus = vec![0.0; 2 * ps];
    let mut s1_list = Vec::with_capacity(cfg.p1);
    let mut s2_list = Vec::with_capacity(cfg.p2);
    let (mut g1, mut g2) = (0.0, 0.0);
    for _ in 0..cfg.p1 {
        let s1 = seeds.next_seed();
        g2 += split_forward(
            objective, theta1, theta2, batch, s1, eps, eps, &mut lplus, &mut s2_list, Seed(0), seeds, counts,
        )?;
        let shift = seeds.next_seed();
        g2 += split_forward(
            objective, theta1, theta2, batch, s1, -2.0 * eps, eps, &mut lminus, &mut s2_list, shift, seeds, counts,
        )?;
        counted_perturb(theta1, s1, eps, Block::First, counts)?;
        g1 += g1_from_losses(&lplus, &lminus, eps, ps)?;
        s1_list.push(s1);
    }
    guard.check(theta)?;
    Ok(StepRecord {
        g1: g1 / cfg.p1 as f64,
        g2: g2 / cfg.p2 as f64,
        s1: s1_list,
        s2: s2_list,
    })
}

/// Whole-model central-difference step with `p` perturbations.
pub fn central_step<T, O>(
    objective: &O,
    theta: &mut [T],
    batch: &O::Batch,
    p: usize,
    eps: f64,
    seeds: &mut dyn SeedSource,
    counts: &mut OpCounts,
) -> Result<StepRecord>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    if p == 0 {
        return Err(Error::config("P must be at least 1"));
    }
    let mut g = 0.0;
    let mut s1 = Vec::with_capacity(p);
    for _ in 0..p {
        let seed = seeds.next_seed();
        g += projected_gradient_central(objective, theta, batch, seed, eps, counts)?;
        s1.push(seed);
    }
    Ok(StepRecord {
        g1: g / p as f64,
        g2: 0.0,
        s1,
        s2: Vec::new(),
    })
}

/// Whole-model forward-difference step: one unperturbed forward plus `p` perturbed ones.
pub fn forward_step<T, O>(
    objective: &O,
    theta: &mut [T],
    batch: &O::Batch,
    p: usize,
    eps: f64,
    seeds: &mut dyn SeedSource,
    counts: &mut OpCounts,
) -> Result<StepRecord>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    if p == 0 {
        return Err(Error::config("P must be at least 1"));
    }
    let base = finite_loss(objective.loss(theta, batch)?)?;
    counts.full_forwards += 1;
    let mut g = 0.0;
    let mut s1 = Vec::with_capacity(p);
    for _ in 0..p {
        let seed = seeds.next_seed();
        g += projected_gradient_forward(objective, theta, batch, seed, eps, base, counts)?;
        s1.push(seed);
    }
    Ok(StepRecord {
        g1: g / p as f64,
        g2: 0.0,
        s1,
        s2: Vec::new(),
    })
}

/// Applies a step's update: `θ[..boundary]` with `(s1, g1)`, then `θ[boundary..]`
/// with `(s2, g2)`. Blocks whose seed list is empty are left untouched.
pub fn apply_step_update<T: Scalar>(
    theta: &mut [T],
    boundary: usize,
    record: &StepRecord,
    mu: f64,
    counts: &mut OpCounts,
) -> Result<()> {
    let (theta1, theta2) = theta.split_at_mut(boundary);
    if !record.s1.is_empty() {
        update_in_place(theta1, &record.s1, record.g1, mu)?;
        counts.update_passes += record.s1.len() as u64;
        counts.updated_params += (record.s1.len() * theta1.len()) as u64;
    }
    if !record.s2.is_empty() {
        update_in_place(theta2, &record.s2, record.g2, mu)?;
        counts.update_passes += record.s2.len() as u64;
        counts.updated_params += (record.s2.len() * theta2.len()) as u64;
    }
    Ok(())
}

/// How a step's seeds were used to perturb θ during estimation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CycleKind {
    /// `(+ε, −2ε, +ε)` per seed.
    Central,
    /// `(+ε, −ε)` per seed.
    Forward,
}

impl CycleKind {
    /// Pass scales as multiples of ε.
    fn multiples(self) -> &'static [f64] {
        match self {
            CycleKind::Central => &[1.0, -2.0, 1.0],
            CycleKind::Forward => &[1.0, -1.0],
        }
    }
}

/// Re-applies the in-place perturbation passes a step made while estimating,
/// without any forward pass.
///
/// In-place cycles restore θ only up to rounding; replaying them (then the
/// update) reproduces the client's parameters bit for bit. Blocks are disjoint,
/// so replaying θ₁'s passes before θ₂'s gives the same per-element operation
/// sequence as the interleaved client order.
pub fn replay_step_perturbations<T: Scalar>(
    theta: &mut [T],
    boundary: usize,
    record: &StepRecord,
    kind: CycleKind,
    eps: f64,
) -> Result<()> {
    let (theta1, theta2) = theta.split_at_mut(boundary);
    for (block, seeds) in [(theta1, &record.s1), (theta2, &record.s2)] {
        for &seed in seeds {
            for &m in kind.multiples() {
                perturb_in_place(block, PerturbationSpec::new(seed, m * eps))?;
            }
        }
    }
    Ok(())
}
