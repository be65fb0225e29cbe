//! Invariant checks on a config at reduced scale.

use std::fmt;

use super::config::ExperimentConfig;
use super::experiment::{Simulation, Task};
use crate::cost::{
    forward_flops, payload_bytes, zo_step_flops_single, zo_step_flops_split, CostModelParams, DifferenceKind, StepFlops,
};
use crate::error::Result;
use crate::model::{backprop_gradient, Batch, ModelSpec};
use crate::protocol::{plan_round, PayloadMode, TrainRule, ZoRule};
use crate::scalar::{Precision, Scalar};

/// Rounds run by [`verify_config`] at most.
pub const VERIFY_ROUNDS: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail: detail.into(),
    }
}

/// Runs the invariant suite on `cfg` with at most [`VERIFY_ROUNDS`] rounds.
pub fn verify_config(cfg: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let mut small = cfg.clone();
    small.rounds = cfg.rounds.min(VERIFY_ROUNDS);
    small.verify_reconstruction = false;
    match cfg.precision {
        Precision::F32 => verify_typed::<f32>(&small),
        Precision::F64 => verify_typed::<f64>(&small),
    }
}

fn verify_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let task = Task::build(cfg)?;
    let mut sim = Simulation::<T>::with_task(cfg, &task)?;
    let test = task.test_batch::<T>()?;
    let mut checks = vec![
        check_split_identity(sim.spec(), sim.global().as_slice(), &test)?,
        check_backprop(sim.spec(), sim.global().as_slice(), &test)?,
    ];

    let mut other_mode = cfg.clone();
    other_mode.payload_mode = match cfg.payload_mode {
        PayloadMode::WithSeeds => PayloadMode::ScalarsOnly,
        PayloadMode::ScalarsOnly => PayloadMode::WithSeeds,
    };
    let mut twin = Simulation::<T>::with_task(&other_mode, &task)?;
    let shards = task.shards::<T>()?;

    let (mut recon_ok, mut modes_ok, mut flops_ok, mut bytes_ok, mut monotone_ok) = (true, true, true, true, true);
    let mut notes = Vec::new();
    for round in 0..cfg.rounds {
        let before = *sim.ledger();
        let out = sim.step(None)?;
        let twin_out = twin.step(None)?;
        if !out.global.bit_eq(&twin_out.global) {
            modes_ok = false;
            notes.push(format!("round {round}: payload modes diverge"));
        }
        for (c, (client, server)) in out.client_finals.iter().zip(&out.server_models).enumerate() {
            if !client.bit_eq(server) {
                recon_ok = false;
                notes.push(format!("round {round}: client #{c} reconstruction differs"));
            }
        }
        if !sim.ledger().dominates(&before) {
            monotone_ok = false;
        }
        let plan = plan_round(round, cfg.master_seed, cfg.n_clients, cfg.clients_per_round())?;
        let mut expected = StepFlops::default();
        for &client in &plan.clients {
            let rows = cfg.batch_size.min(shards[client as usize].len());
            let step = analytic_step(sim.spec(), sim.rule(), rows);
            expected.forward += step.forward * cfg.local_steps as u64;
            expected.perturb += step.perturb * cfg.local_steps as u64;
            expected.update += step.update * cfg.local_steps as u64;
        }
        let got = StepFlops {
            forward: out.ledger.fw_flops,
            perturb: out.ledger.perturb_flops,
            update: out.ledger.update_flops,
        };
        if got != expected {
            flops_ok = false;
            notes.push(format!("round {round}: counted {got:?}, analytic {expected:?}"));
        }
        if let TrainRule::Zo(rule) = sim.rule() {
            let (p1, p2) = rule.seed_counts();
            let predicted = payload_bytes(cfg.local_steps as u64, p1 as u64, p2 as u64, cfg.payload_mode);
            if out.payloads.iter().any(|p| p.len() as u64 != predicted) {
                bytes_ok = false;
                notes.push(format!("round {round}: payload length differs from {predicted} bytes"));
            }
        }
    }
    let rounds = cfg.rounds;
    let zo = matches!(sim.rule(), TrainRule::Zo(_));
    checks.push(outcome(
        "reconstruction",
        recon_ok,
        if zo {
            format!("server replay matched every client bitwise over {rounds} rounds")
        } else {
            "first-order clients upload full models".to_string()
        },
    ));
    checks.push(outcome(
        "payload-modes",
        modes_ok,
        format!("scalars-only and with-seeds runs agree bitwise over {rounds} rounds"),
    ));
    checks.push(outcome("ledger-formula", flops_ok, "per-round FLOP counters equal the analytic step cost"));
    checks.push(outcome("payload-bytes", bytes_ok, "encoded payload lengths equal the byte model"));
    checks.push(outcome("ledger-monotone", monotone_ok, "cumulative counters never decrease"));
    if !notes.is_empty() {
        for c in checks.iter_mut().filter(|c| !c.passed) {
            c.detail = format!("{} ({})", c.detail, notes.join("; "));
        }
    }
    Ok(checks)
}

/// Analytic per-step cost of `rule` on a batch of `rows`.
pub fn analytic_step(spec: &ModelSpec, rule: TrainRule, rows: usize) -> StepFlops {
    let params = CostModelParams::for_model(spec, rows);
    let d = spec.param_count() as u64;
    match rule {
        TrainRule::Zo(ZoRule::Split(cfg)) => zo_step_flops_split(&cfg, &params),
        TrainRule::Zo(ZoRule::Central { p, .. }) => {
            zo_step_flops_single(forward_flops(spec, rows), p as u64, d, DifferenceKind::Central)
        }
        TrainRule::Zo(ZoRule::Forward { p, .. }) => {
            zo_step_flops_single(forward_flops(spec, rows), p as u64, d, DifferenceKind::Forward)
        }
        TrainRule::FirstOrder { .. } => crate::cost::fo_step_flops(forward_flops(spec, rows), d),
    }
}

fn check_split_identity<T: Scalar>(spec: &ModelSpec, theta: &[T], batch: &Batch<T>) -> Result<CheckOutcome> {
    let full = spec.forward_loss(theta, batch)?;
    let split = spec.split();
    let (t1, t2) = theta.split_at(split.d1);
    let y = spec.forward_block1(t1, batch)?;
    let composed = spec.forward_block2(t2, &y, &batch.labels)?;
    Ok(outcome(
        "split-forward",
        full.to_bits() == composed.to_bits(),
        format!("block composition {composed} vs full forward {full}"),
    ))
}

/// Backprop against central differences on up to 16 evenly spaced coordinates.
fn check_backprop<T: Scalar>(spec: &ModelSpec, theta: &[T], batch: &Batch<T>) -> Result<CheckOutcome> {
    let theta64: Vec<f64> = theta.iter().map(|v| v.as_f64()).collect();
    let batch64 = Batch::new(
        batch.inputs.iter().map(|v| v.as_f64()).collect(),
        batch.dim,
        batch.labels.clone(),
    )?;
    let grad = backprop_gradient(spec, &theta64, &batch64)?;
    let d = theta64.len();
    let picks = 16.min(d);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = theta64.clone();
    for k in 0..picks {
        let i = k * d / picks;
        probe[i] = theta64[i] + h;
        let up = spec.forward_loss(&probe, &batch64)?;
        probe[i] = theta64[i] - h;
        let down = spec.forward_loss(&probe, &batch64)?;
        probe[i] = theta64[i];
        let fd = (up - down) / (2.0 * h);
        let g = grad.as_slice()[i];
        let err = (g - fd).abs() / (1e-6 + g.abs().max(fd.abs()));
        worst = worst.max(err);
    }
    Ok(outcome(
        "backprop-oracle",
        worst < 1e-4,
        format!("worst relative gap {worst:.2e} over {picks} coordinates"),
    ))
}
