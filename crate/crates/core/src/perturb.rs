//! Seed-replayable Gaussian perturbations.
//!
//! A perturbation vector is never stored: every pass re-seeds a generator and
//! regenerates `z` element by element in canonical parameter order. The
//! generator is pinned so that client and server produce identical streams:
//!
//! * state expansion: splitmix64 applied to the 64-bit seed, four outputs;
//! * uniforms: xoshiro256++, top 53 bits scaled to `[0, 1)`;
//! * normals: Box–Muller on consecutive uniform pairs `(a, b)` with
//!   `r = sqrt(-2 ln(1 - a))`, yielding `r cos(2πb)` then `r sin(2πb)`.
//!
//! Transcendentals come from `libm` so the stream does not depend on the
//! platform math library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper bound (inclusive) of seeds drawn inside training loops.
pub const SEED_RANGE_MAX: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Wrapping 64-bit addition, used for the negative-direction seed shift.
    pub fn shifted(self, shift: Seed) -> Seed {
        Seed(self.0.wrapping_add(shift.0))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// One in-place perturbation pass: `θ += scale · z(seed)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub seed: Seed,
    pub scale: f64,
}

impl PerturbationSpec {
    pub fn new(seed: Seed, scale: f64) -> Self {
        Self { seed, scale }
    }
}

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless 64-bit mix of a value list, used to derive independent sub-seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x6a09_e667_f3bc_c908u64;
    let mut out = 0;
    for &p in parts {
        state ^= p;
        out = splitmix64(&mut state);
        state = out;
    }
    out
}

#[derive(Clone, Debug)]
pub struct Xoshiro256PlusPlus {
    s: [u64; 4],
}

impl Xoshiro256PlusPlus {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { s }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..=max` by rejection (no modulo bias).
    pub fn next_bounded(&mut self, max: u64) -> u64 {
        if max == u64::MAX {
            return self.next_u64();
        }
        let range = max + 1;
        let zone = u64::MAX - (u64::MAX % range) - 1;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % range;
            }
        }
    }
}

/// Deterministic standard-normal sequence for one seed.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: Seed) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::from_seed(seed.0),
            spare: None,
        }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let a = self.rng.next_f64();
        let b = self.rng.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(1.0 - a));
        let (sin, cos) = libm::sincos(2.0 * std::f64::consts::PI * b);
        self.spare = Some(r * sin);
        r * cos
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_normal())
    }
}

pub fn gaussian_stream(seed: Seed) -> GaussianStream {
    GaussianStream::new(seed)
}

/// `θᵢ ← θᵢ + scale·zᵢ` over the whole slice, regenerating `z` from the seed.
///
/// Consumes exactly `theta.len()` normals from a fresh stream; an odd
/// Box–Muller leftover at the end of the pass is dropped with the stream.
pub fn perturb_in_place<T: Scalar>(theta: &mut [T], spec: PerturbationSpec) -> Result<()> {
    if !spec.scale.is_finite() {
        return Err(Error::Numeric(format!("perturbation scale {}", spec.scale)));
    }
    if spec.scale == 0.0 {
        return Ok(());
    }
    let scale = T::from_f64(spec.scale);
    let mut stream = GaussianStream::new(spec.seed);
    let mut finite = true;
    for v in theta.iter_mut() {
        *v = *v + scale * T::from_f64(stream.next_normal());
        finite &= v.is_finite();
    }
    if finite {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "perturbation with seed {} produced a non-finite parameter",
            spec.seed.0
        )))
    }
}

/// Applies `θᵢ ← θᵢ − μ·g·zᵢ⁽ᵖ⁾` for every seed in order.
///
/// `g` is the projected gradient already averaged over the seeds.
pub fn update_in_place<T: Scalar>(theta: &mut [T], seeds: &[Seed], g: f64, mu: f64) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::contract("update requires at least one seed"));
    }
    let step = mu * g;
    if !step.is_finite() {
        return Err(Error::Numeric(format!("update step μ·g = {step}")));
    }
    if step == 0.0 {
        return Ok(());
    }
    let step = T::from_f64(step);
    let mut finite = true;
    for &seed in seeds {
        let mut stream = GaussianStream::new(seed);
        for v in theta.iter_mut() {
            *v = *v - step * T::from_f64(stream.next_normal());
            finite &= v.is_finite();
        }
    }
    if finite {
        Ok(())
    } else {
        Err(Error::Numeric("update produced a non-finite parameter".into()))
    }
}

/// Source of perturbation seeds, consumed in the order the client algorithm draws them.
pub trait SeedSource {
    fn next_seed(&mut self) -> Seed;
}

/// Seeds uniform on `{0, …, 10⁸}` from a dedicated generator seeded by a root seed.
#[derive(Clone, Debug)]
pub struct SeedStream {
    rng: Xoshiro256PlusPlus,
}

impl SeedStream {
    pub fn new(root: Seed) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::from_seed(root.0),
        }
    }
}

impl SeedSource for SeedStream {
    fn next_seed(&mut self) -> Seed {
        Seed(self.rng.next_bounded(SEED_RANGE_MAX))
    }
}

/// Replays a fixed seed list; used by tests and by callers that pre-draw seeds.
#[derive(Clone, Debug)]
pub struct ListSeedSource {
    seeds: std::vec::IntoIter<Seed>,
}

impl ListSeedSource {
    pub fn new(seeds: Vec<Seed>) -> Self {
        Self {
            seeds: seeds.into_iter(),
        }
    }
}

impl SeedSource for ListSeedSource {
    fn next_seed(&mut self) -> Seed {
        self.seeds.next().expect("seed list exhausted")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of splitmix64 seeded with 0 (Vigna's C implementation).
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(&mut s), 0x6e789e6aa1b965f4);
        assert_eq!(splitmix64(&mut s), 0x06c45d188009454f);
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = gaussian_stream(Seed(42)).take(10_000).collect();
        let b: Vec<f64> = gaussian_stream(Seed(42)).take(10_000).collect();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn distinct_seeds_differ() {
        let a: Vec<f64> = gaussian_stream(Seed(1)).take(100).collect();
        let b: Vec<f64> = gaussian_stream(Seed(2)).take(100).collect();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn moments_of_one_million_draws() {
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for z in gaussian_stream(Seed(42)).take(n) {
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((std - 1.0).abs() < 0.005, "std {std}");
    }

    #[test]
    fn zero_scale_is_identity() {
        let mut theta = vec![0.3f64, -1.2, 7.0];
        let before = theta.clone();
        perturb_in_place(&mut theta, PerturbationSpec::new(Seed(9), 0.0)).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn perturbation_adds_scaled_stream() {
        let mut theta = vec![0.0f64; 3];
        perturb_in_place(&mut theta, PerturbationSpec::new(Seed(7), 0.1)).unwrap();
        let z: Vec<f64> = gaussian_stream(Seed(7)).take(3).collect();
        for i in 0..3 {
            assert_eq!(theta[i], 0.1 * z[i]);
        }
    }

    #[test]
    fn plus_then_minus_restores() {
        let mut theta: Vec<f64> = (0..257).map(|i| (i as f64 * 0.37).sin()).collect();
        let before = theta.clone();
        perturb_in_place(&mut theta, PerturbationSpec::new(Seed(3), 1e-3)).unwrap();
        perturb_in_place(&mut theta, PerturbationSpec::new(Seed(3), -1e-3)).unwrap();
        for (a, b) in theta.iter().zip(&before) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn central_cycle_restores() {
        let mut theta: Vec<f64> = (0..100).map(|i| i as f64 - 50.0).collect();
        let before = theta.clone();
        let eps = 1e-3;
        for scale in [eps, -2.0 * eps, eps] {
            perturb_in_place(&mut theta, PerturbationSpec::new(Seed(11), scale)).unwrap();
        }
        for (a, b) in theta.iter().zip(&before) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_perturbation_is_an_error() {
        let mut theta = vec![f64::MAX; 64];
        let err = perturb_in_place(&mut theta, PerturbationSpec::new(Seed(1), 1e308));
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn update_with_zero_gradient_is_identity() {
        let mut theta = vec![1.0f32, 2.0, 3.0];
        update_in_place(&mut theta, &[Seed(1), Seed(2)], 0.0, 0.1).unwrap();
        assert_eq!(theta, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unit_update_subtracts_stream() {
        let mut theta = vec![0.5f64; 5];
        update_in_place(&mut theta, &[Seed(123)], 1.0, 1.0).unwrap();
        for (v, z) in theta.iter().zip(gaussian_stream(Seed(123))) {
            assert_eq!(*v, 0.5 - z);
        }
    }

    #[test]
    fn multi_seed_update_decomposes() {
        let base: Vec<f64> = (0..33).map(|i| (i as f64).cos()).collect();
        let mut joint = base.clone();
        update_in_place(&mut joint, &[Seed(5), Seed(6)], 0.25, 0.01).unwrap();
        let mut split = base;
        update_in_place(&mut split, &[Seed(5)], 0.25, 0.01).unwrap();
        update_in_place(&mut split, &[Seed(6)], 0.25, 0.01).unwrap();
        assert_eq!(joint, split);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let mut theta = vec![0.0f64; 2];
        assert!(matches!(
            update_in_place(&mut theta, &[], 1.0, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn seed_stream_stays_in_range() {
        let mut s = SeedStream::new(Seed(77));
        for _ in 0..10_000 {
            assert!(s.next_seed().0 <= SEED_RANGE_MAX);
        }
    }
}
