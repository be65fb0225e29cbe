use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{update_boundary, ClientPayload, PayloadMode, ZoRule};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{backprop_gradient, Batch, ModelSpec, ParamVector};
use crate::perturb::{mix_seed, Seed, SeedStream};
use crate::scalar::Scalar;
use crate::zo::{apply_step_update, central_step, forward_step, spzo_step, Objective, OpCounts, SplitObjective};

const BATCH_STREAM_TAG: u64 = 0xba7c_4e5a_3b1e_0001;

/// What the server hands a sampled client for one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientTask {
    pub client_id: u32,
    pub round_id: u32,
    /// Root of the client's perturbation-seed stream for this round.
    pub root_seed: Seed,
    pub mode: PayloadMode,
}

impl ClientTask {
    /// Seed of the minibatch sampler; independent of the perturbation-seed stream.
    pub fn batch_seed(&self) -> u64 {
        mix_seed(&[self.root_seed.0, BATCH_STREAM_TAG])
    }
}

#[derive(Clone, Debug)]
pub struct ClientOutcome<T> {
    pub payload: ClientPayload,
    /// The client's parameters after its last local step.
    pub final_params: ParamVector<T>,
    pub counts: OpCounts,
    /// Rows per local batch (`min(batch_size, shard size)`).
    pub batch_rows: usize,
}

/// Zero-order local training: `K` rounds of (sample batch → estimate → update θ₁ → update θ₂).
#[allow(clippy::too_many_arguments)]
pub fn client_train<T, M>(
    model: &M,
    theta_round: &ParamVector<T>,
    rule: &ZoRule,
    local_steps: usize,
    data: &ClientShard<T>,
    batch_size: usize,
    task: &ClientTask,
) -> Result<ClientOutcome<T>>
where
    T: Scalar,
    M: Objective<T, Batch = Batch<T>> + SplitObjective<T, Batch = Batch<T>>,
{
    rule.validate()?;
    if data.is_empty() {
        return Err(Error::config("client has no local data"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let split = model.block_split();
    if theta_round.len() != split.d() {
        return Err(Error::config(format!(
            "global model has {} parameters, client model expects {}",
            theta_round.len(),
            split.d()
        )));
    }
    let (p1, p2) = rule.seed_counts();
    let boundary = update_boundary(p2, split.d1, split.d());
    let mu = rule.mu();

    let mut theta = theta_round.clone();
    let mut seeds = SeedStream::new(task.root_seed);
    let mut batches = ChaCha8Rng::seed_from_u64(task.batch_seed());
    let mut counts = OpCounts::default();
    let mut steps = Vec::with_capacity(local_steps);
    for k in 0..local_steps {
        let batch = data.sample_batch(&mut batches, batch_size);
        let theta_mut = theta.as_mut_slice();
        let record = match rule {
            ZoRule::Split(cfg) => spzo_step(model, theta_mut, &batch, cfg, &mut seeds, &mut counts),
            ZoRule::Central { p, eps, .. } => central_step(model, theta_mut, &batch, *p, *eps, &mut seeds, &mut counts),
            ZoRule::Forward { p, eps, .. } => forward_step(model, theta_mut, &batch, *p, *eps, &mut seeds, &mut counts),
        }
        .map_err(|e| e.at_step(k))?;
        apply_step_update(theta_mut, boundary, &record, mu, &mut counts).map_err(|e| e.at_step(k))?;
        steps.push(record);
    }

    let root_seed = match task.mode {
        PayloadMode::ScalarsOnly => {
            for s in &mut steps {
                s.s1.clear();
                s.s2.clear();
            }
            Some(task.root_seed)
        }
        PayloadMode::WithSeeds => None,
    };
    Ok(ClientOutcome {
        payload: ClientPayload {
            client_id: task.client_id,
            round_id: task.round_id,
            mode: task.mode,
            p1: p1 as u32,
            p2: p2 as u32,
            root_seed,
            steps,
        },
        final_params: theta,
        counts,
        batch_rows: batch_size.min(data.len()),
    })
}

/// First-order baseline: `K` minibatch SGD steps with backpropagated gradients.
pub fn fo_client_train<T: Scalar>(
    spec: &ModelSpec,
    theta_round: &ParamVector<T>,
    mu: f64,
    local_steps: usize,
    data: &ClientShard<T>,
    batch_size: usize,
    batch_seed: u64,
) -> Result<(ParamVector<T>, OpCounts)> {
    if data.is_empty() {
        return Err(Error::config("client has no local data"));
    }
    let mut theta = theta_round.clone();
    let mut batches = ChaCha8Rng::seed_from_u64(batch_seed);
    let mut counts = OpCounts::default();
    let step = T::from_f64(mu);
    for k in 0..local_steps {
        let batch = data.sample_batch(&mut batches, batch_size);
        let grad = backprop_gradient(spec, theta.as_slice(), &batch).map_err(|e| e.at_step(k))?;
        for (v, g) in theta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *v = *v - step * *g;
        }
        if !theta.is_finite() {
            return Err(Error::Numeric("SGD update produced a non-finite parameter".into()).at_step(k));
        }
        counts.full_forwards += 1;
        counts.backward_passes += 1;
        counts.sgd_updated_params += theta.len() as u64;
    }
    Ok((theta, counts))
}
