//! Zero-order estimators on analytic objectives and on the MLP.

mod common;

use common::{random_batch, random_mlp, random_theta};
use fedspzo::cost::{zo_step_flops_single, zo_step_flops_split, CostModelParams, DifferenceKind};
use fedspzo::model::{BlockSplit, ModelSpec, Nonlinearity};
use fedspzo::perturb::{gaussian_stream, Seed, SeedStream};
use fedspzo::zo::{central_step, forward_step, spzo_step, OpCounts, SplitConfig, SplitObjective};
use fedspzo::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// f₁ passes θ₁ through unchanged; f₂ adds `½‖y‖² + ½‖θ₂ − t‖²`.
struct PassThroughQuadratic {
    target: Vec<f64>,
    d1: usize,
}

impl SplitObjective<f64> for PassThroughQuadratic {
    type Batch = ();
    type Cache = Vec<f64>;

    fn block_split(&self) -> BlockSplit {
        BlockSplit {
            cut: 1,
            d1: self.d1,
            d2: self.target.len(),
        }
    }

    fn forward_block1(&self, theta1: &[f64], _: &()) -> Result<Vec<f64>> {
        Ok(theta1.to_vec())
    }

    fn forward_block2(&self, theta2: &[f64], y: &Vec<f64>, _: &()) -> Result<f64> {
        let head: f64 = theta2.iter().zip(&self.target).map(|(t, c)| (t - c) * (t - c)).sum();
        Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>() + 0.5 * head)
    }
}

fn stream_prefix(seed: Seed, d: usize) -> Vec<f64> {
    let mut s = gaussian_stream(seed);
    (0..d).map(|_| s.next_normal()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

#[test]
fn split_estimate_aligns_with_each_block_gradient() {
    let (d1, d2) = (12, 6);
    let obj = PassThroughQuadratic {
        target: (0..d2).map(|i| i as f64 * 0.4 - 1.0).collect(),
        d1,
    };
    let mut theta: Vec<f64> = (0..d1 + d2).map(|i| ((i * 7) as f64 * 0.13).sin()).collect();
    let grad1: Vec<f64> = theta[..d1].to_vec();
    let grad2: Vec<f64> = theta[d1..].iter().zip(&obj.target).map(|(t, c)| t - c).collect();
    let cfg = SplitConfig::new(2, 8, 1e-4, 1e-3).unwrap();
    let mut seeds = SeedStream::new(Seed(2024));
    let mut counts = OpCounts::default();
    let (mut est1, mut est2) = (vec![0.0; d1], vec![0.0; d2]);
    for _ in 0..500 {
        let rec = spzo_step(&obj, &mut theta, &(), &cfg, &mut seeds, &mut counts).unwrap();
        for &s in &rec.s1 {
            for (e, z) in est1.iter_mut().zip(stream_prefix(s, d1)) {
                *e += rec.g1 * z;
            }
        }
        for &s in &rec.s2 {
            for (e, z) in est2.iter_mut().zip(stream_prefix(s, d2)) {
                *e += rec.g2 * z;
            }
        }
    }
    let (c1, c2) = (cosine(&est1, &grad1), cosine(&est2, &grad2));
    assert!(c1 >= 0.8, "θ₁ cosine {c1}");
    assert!(c2 >= 0.8, "θ₂ cosine {c2}");
}

#[test]
fn estimators_restore_mlp_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let spec = random_mlp(&mut rng);
        let before: Vec<f64> = random_theta(&mut rng, spec.param_count(), 2.0);
        let batch = random_batch::<f64, _>(&mut rng, &spec, 5);
        let mut theta = before.clone();
        let mut seeds = SeedStream::new(Seed(trial));
        let mut counts = OpCounts::default();
        let cfg = SplitConfig::new(2, 8, 1e-3, 1e-3).unwrap();
        spzo_step(&spec, &mut theta, &batch, &cfg, &mut seeds, &mut counts).unwrap();
        central_step(&spec, &mut theta, &batch, 4, 1e-3, &mut seeds, &mut counts).unwrap();
        forward_step(&spec, &mut theta, &batch, 4, 1e-3, &mut seeds, &mut counts).unwrap();
        let scale = 1.0 + before.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = before.iter().zip(&theta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-10 * scale, "trial {trial}: drift {worst}");
    }
}

#[test]
fn split_step_counts_match_structure() {
    let spec = ModelSpec::mlp(6, &[10, 5], 3, Nonlinearity::Tanh, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut theta: Vec<f64> = random_theta(&mut rng, spec.param_count(), 0.5);
    let batch = random_batch::<f64, _>(&mut rng, &spec, 4);
    for (p1, p2) in [(1, 2), (2, 8), (3, 12)] {
        let cfg = SplitConfig::new(p1, p2, 1e-3, 1e-3).unwrap();
        let mut counts = OpCounts::default();
        let mut seeds = SeedStream::new(Seed(9));
        let rec = spzo_step(&spec, &mut theta, &batch, &cfg, &mut seeds, &mut counts).unwrap();
        assert_eq!((rec.s1.len(), rec.s2.len()), (p1, p2));
        assert_eq!(counts.block1_forwards, 2 * p1 as u64);
        assert_eq!(counts.block2_forwards, 2 * p2 as u64);
        assert_eq!(counts.block1_perturb_passes, 3 * p1 as u64);
        assert_eq!(counts.block2_perturb_passes, 3 * p2 as u64);
        assert_eq!(counts.full_forwards, 0);
    }
}

#[test]
fn whole_model_central_costs_more_than_split() {
    let spec = ModelSpec::mlp(32, &[64, 4], 4, Nonlinearity::Tanh, None).unwrap();
    let params = CostModelParams::for_model(&spec, 4);
    let split = zo_step_flops_split(&SplitConfig::new(2, 8, 1e-3, 1e-3).unwrap(), &params);
    let central = zo_step_flops_single(params.fw_flops(), 8, params.d(), DifferenceKind::Central);
    assert!(central.total() > split.total());
    assert!(central.forward > split.forward);
}
