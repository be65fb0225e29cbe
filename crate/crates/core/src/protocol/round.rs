use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    client_root_seed, client_sampler, client_train, decode_payload, encode_payload, fo_client_train, reconstruct, ClientTask,
    PayloadMode, ZoRule,
};
use super::aggregate;
use crate::cost::{
    flops_from_counts, payload_bytes, peak_memory_backprop, peak_memory_model, peak_memory_single_block, CostLedger,
    CostModelParams,
};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::perturb::Seed;
use crate::scalar::Scalar;

/// Local training rule of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainRule {
    Zo(ZoRule),
    /// Minibatch SGD with backpropagated gradients; clients upload full models.
    FirstOrder { mu: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundConfig {
    pub rule: TrainRule,
    pub local_steps: usize,
    pub batch_size: usize,
    pub mode: PayloadMode,
    pub master_seed: u64,
    /// Compare every reconstruction with the client's own final parameters.
    pub verify_reconstruction: bool,
}

/// Sampled clients of one round and the root seed issued to each.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundPlan {
    pub round_id: u32,
    pub clients: Vec<u32>,
    pub root_seeds: Vec<Seed>,
}

pub fn plan_round(round_id: u32, master_seed: u64, n_clients: usize, m: usize) -> Result<RoundPlan> {
    let clients = client_sampler(round_id, master_seed, n_clients, m)?;
    let root_seeds = clients
        .iter()
        .map(|&c| client_root_seed(master_seed, round_id, c))
        .collect();
    Ok(RoundPlan {
        round_id,
        clients,
        root_seeds,
    })
}

#[derive(Clone, Debug)]
pub struct RoundOutput<T> {
    pub global: ParamVector<T>,
    /// Parameters each client held after local training, in plan order.
    pub client_finals: Vec<ParamVector<T>>,
    /// Parameters the server averaged (reconstructions for zero-order rules).
    pub server_models: Vec<ParamVector<T>>,
    /// Encoded uploads; empty for the first-order rule.
    pub payloads: Vec<Vec<u8>>,
    /// Cost incurred by this round alone.
    pub ledger: CostLedger,
}

struct ClientResult<T> {
    client_final: ParamVector<T>,
    server_model: ParamVector<T>,
    payload: Vec<u8>,
    ledger: CostLedger,
}

fn train_one<T: Scalar>(
    spec: &ModelSpec,
    global: &ParamVector<T>,
    plan: &RoundPlan,
    idx: usize,
    shards: &[ClientShard<T>],
    cfg: &RoundConfig,
) -> Result<ClientResult<T>> {
    let client_id = plan.clients[idx];
    let shard = shards
        .get(client_id as usize)
        .ok_or_else(|| Error::config(format!("no data shard for client {client_id}")))?;
    let precision = T::PRECISION;
    let d = spec.param_count() as u64;
    let mut ledger = CostLedger::default();
    ledger.add_download(d * precision.bytes());
    let rows = cfg.batch_size.min(shard.len());
    let params = CostModelParams::for_model(spec, rows);
    let task = ClientTask {
        client_id,
        round_id: plan.round_id,
        root_seed: plan.root_seeds[idx],
        mode: cfg.mode,
    };
    match cfg.rule {
        TrainRule::Zo(rule) => {
            let outcome = client_train(spec, global, &rule, cfg.local_steps, shard, cfg.batch_size, &task)?;
            let bytes = encode_payload(&outcome.payload)?;
            let predicted = payload_bytes(
                outcome.payload.k() as u64,
                outcome.payload.p1 as u64,
                outcome.payload.p2 as u64,
                cfg.mode,
            );
            if bytes.len() as u64 != predicted {
                return Err(Error::Invariant(format!(
                    "payload is {} bytes, cost model predicts {predicted}",
                    bytes.len()
                )));
            }
            let received = decode_payload(&bytes)?;
            let rebuilt = reconstruct(global, &received, &rule, spec.split().d1)?;
            if cfg.verify_reconstruction && !rebuilt.bit_eq(&outcome.final_params) {
                return Err(Error::Invariant("server reconstruction differs from client parameters".into()));
            }
            ledger.charge_flops(&flops_from_counts(&outcome.counts, &params));
            ledger.add_upload(bytes.len() as u64);
            ledger.observe_peak_memory(match rule {
                ZoRule::Split(_) => peak_memory_model(spec, spec.cut(), rows, precision),
                _ => peak_memory_single_block(spec, rows, precision),
            });
            Ok(ClientResult {
                client_final: outcome.final_params,
                server_model: rebuilt,
                payload: bytes,
                ledger,
            })
        }
        TrainRule::FirstOrder { mu } => {
            let (theta, counts) = fo_client_train(spec, global, mu, cfg.local_steps, shard, cfg.batch_size, task.batch_seed())?;
            ledger.charge_flops(&flops_from_counts(&counts, &params));
            ledger.add_upload(d * precision.bytes());
            ledger.observe_peak_memory(peak_memory_backprop(spec, rows, precision));
            Ok(ClientResult {
                client_final: theta.clone(),
                server_model: theta,
                payload: Vec::new(),
                ledger,
            })
        }
    }
}

/// Broadcast → local training on every sampled client → reconstruction → averaging.
///
/// Clients may run on `pool`; results are always combined in plan (ascending id) order.
pub fn run_round<T: Scalar>(
    spec: &ModelSpec,
    global: &ParamVector<T>,
    plan: &RoundPlan,
    shards: &[ClientShard<T>],
    cfg: &RoundConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RoundOutput<T>> {
    if plan.clients.is_empty() || plan.clients.len() != plan.root_seeds.len() {
        return Err(Error::contract("round plan needs at least one client and one root seed per client"));
    }
    let work = |idx: usize| {
        train_one(spec, global, plan, idx, shards, cfg).map_err(|e| e.for_client(plan.round_id, plan.clients[idx]))
    };
    let results: Vec<Result<ClientResult<T>>> = match pool {
        Some(pool) => pool.install(|| (0..plan.clients.len()).into_par_iter().map(work).collect()),
        None => (0..plan.clients.len()).map(work).collect(),
    };
    let mut ledger = CostLedger::default();
    let mut client_finals = Vec::with_capacity(results.len());
    let mut server_models = Vec::with_capacity(results.len());
    let mut payloads = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        ledger.merge(&r.ledger);
        client_finals.push(r.client_final);
        server_models.push(r.server_model);
        if !r.payload.is_empty() {
            payloads.push(r.payload);
        }
    }
    let global = aggregate(&server_models)?;
    Ok(RoundOutput {
        global,
        client_finals,
        server_models,
        payloads,
        ledger,
    })
}
