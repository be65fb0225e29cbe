use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{regenerate_step_seeds, update_boundary, ClientPayload, PayloadMode, StepRecord, ZoRule};
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::perturb::{mix_seed, Seed, SeedStream};
use crate::scalar::Scalar;
use crate::zo::{apply_step_update, replay_step_perturbations, OpCounts};

const SAMPLER_TAG: u64 = 0x5a3b_1e00_c11e_0002;
const ROOT_TAG: u64 = 0x2007_5eed_0000_0003;

/// Replays a client's `K` local steps from its payload.
///
/// Touches neither data nor the model's forward pass. Each step regenerates
/// the directions from seeds, re-applies the estimation-time perturbation
/// passes (which restore θ only up to rounding), then applies `(g1, S1)` to θ₁
/// and `(g2, S2)` to θ₂. The result matches the client's parameters bit for bit.
pub fn reconstruct<T: Scalar>(
    theta_round: &ParamVector<T>,
    payload: &ClientPayload,
    rule: &ZoRule,
    d1: usize,
) -> Result<ParamVector<T>> {
    payload.validate()?;
    rule.validate()?;
    if d1 > theta_round.len() {
        return Err(Error::config(format!("θ₁ size {d1} exceeds model size {}", theta_round.len())));
    }
    let (p1, p2) = rule.seed_counts();
    if (payload.p1 as usize, payload.p2 as usize) != (p1, p2) {
        return Err(Error::contract(format!(
            "payload declares (P1, P2) = ({}, {}), rule expects ({p1}, {p2})",
            payload.p1, payload.p2
        )));
    }
    let layout = rule.layout();
    let boundary = update_boundary(p2, d1, theta_round.len());
    let mut stream = match payload.mode {
        PayloadMode::ScalarsOnly => Some(SeedStream::new(payload.root_seed.expect("validated"))),
        PayloadMode::WithSeeds => None,
    };
    let mut theta = theta_round.clone();
    let mut counts = OpCounts::default();
    for (k, step) in payload.steps.iter().enumerate() {
        let regenerated;
        let record = match stream.as_mut() {
            Some(stream) => {
                let (s1, s2) = regenerate_step_seeds(stream, &layout);
                regenerated = StepRecord {
                    g1: step.g1,
                    g2: step.g2,
                    s1,
                    s2,
                };
                &regenerated
            }
            None => step,
        };
        replay_step_perturbations(theta.as_mut_slice(), boundary, record, rule.cycle_kind(), rule.eps())
            .and_then(|()| apply_step_update(theta.as_mut_slice(), boundary, record, rule.mu(), &mut counts))
            .map_err(|e| e.at_step(k))?;
    }
    Ok(theta)
}

/// Element-wise mean, summing in the given order.
pub fn aggregate<T: Scalar>(models: &[ParamVector<T>]) -> Result<ParamVector<T>> {
    let (first, rest) = models
        .split_first()
        .ok_or_else(|| Error::contract("cannot aggregate an empty model list"))?;
    let mut acc = first.clone();
    for m in rest {
        if m.len() != acc.len() {
            return Err(Error::contract(format!(
                "model lengths differ ({} vs {})",
                m.len(),
                acc.len()
            )));
        }
        for (a, v) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a = *a + *v;
        }
    }
    let count = T::from_f64(models.len() as f64);
    for a in acc.as_mut_slice() {
        *a = *a / count;
    }
    Ok(acc)
}

/// `m` distinct client ids drawn uniformly without replacement, ascending.
pub fn client_sampler(round_id: u32, master_seed: u64, n_clients: usize, m: usize) -> Result<Vec<u32>> {
    if m == 0 || m > n_clients {
        return Err(Error::config(format!("cannot sample {m} of {n_clients} clients")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[master_seed, SAMPLER_TAG, round_id as u64]));
    let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, n_clients, m)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Root seed the server issues to `client` in `round`.
pub fn client_root_seed(master_seed: u64, round_id: u32, client_id: u32) -> Seed {
    Seed(mix_seed(&[master_seed, ROOT_TAG, round_id as u64, client_id as u64]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SeedLayout;
    use crate::zo::SplitConfig;

    #[test]
    fn aggregate_edge_cases() {
        let a = ParamVector::from_vec(vec![1.5f64, -2.25, 1e-300]);
        assert!(aggregate(std::slice::from_ref(&a)).unwrap().bit_eq(&a));
        let same = aggregate(&[a.clone(), a.clone(), a.clone()]).unwrap();
        for (x, y) in same.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() <= f64::EPSILON * y.abs());
        }
        let neg = ParamVector::from_vec(a.as_slice().iter().map(|v| -v).collect());
        assert!(aggregate(&[a.clone(), neg]).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(aggregate::<f64>(&[]).is_err());
        assert!(aggregate(&[a, ParamVector::from_vec(vec![0.0])]).is_err());
    }

    #[test]
    fn sampler_contract() {
        assert_eq!(client_sampler(3, 1, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(client_sampler(8, 2, 20, 2).unwrap(), client_sampler(8, 2, 20, 2).unwrap());
        assert!(client_sampler(0, 0, 4, 0).is_err());
        assert!(client_sampler(0, 0, 4, 5).is_err());
        let ids = client_sampler(1, 9, 100, 10).unwrap();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    fn zero_payload(mode: PayloadMode) -> ClientPayload {
        let mut stream = SeedStream::new(Seed(3));
        let layout = SeedLayout::new(1, 2).unwrap();
        let steps = (0..4)
            .map(|_| {
                let (s1, s2) = regenerate_step_seeds(&mut stream, &layout);
                match mode {
                    PayloadMode::WithSeeds => StepRecord { g1: 0.0, g2: 0.0, s1, s2 },
                    PayloadMode::ScalarsOnly => StepRecord { g1: 0.0, g2: 0.0, s1: vec![], s2: vec![] },
                }
            })
            .collect();
        ClientPayload {
            client_id: 0,
            round_id: 0,
            mode,
            p1: 1,
            p2: 2,
            root_seed: (mode == PayloadMode::ScalarsOnly).then_some(Seed(3)),
            steps,
        }
    }

    #[test]
    fn zero_gradient_payload_reconstructs_round_model() {
        let theta = ParamVector::from_vec(vec![0.1f64, 0.2, 0.3, 0.4]);
        let rule = ZoRule::Split(SplitConfig::new(1, 2, 1e-3, 0.1).unwrap());
        let a = reconstruct(&theta, &zero_payload(PayloadMode::ScalarsOnly), &rule, 2).unwrap();
        let b = reconstruct(&theta, &zero_payload(PayloadMode::WithSeeds), &rule, 2).unwrap();
        assert!(a.bit_eq(&b));
        for (x, y) in a.as_slice().iter().zip(theta.as_slice()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn reconstruct_rejects_rule_mismatch() {
        let theta = ParamVector::from_vec(vec![0.1f64, 0.2, 0.3, 0.4]);
        let rule = ZoRule::Central { p: 1, eps: 1e-3, mu: 0.1 };
        assert!(reconstruct(&theta, &zero_payload(PayloadMode::WithSeeds), &rule, 2).is_err());
    }
}
