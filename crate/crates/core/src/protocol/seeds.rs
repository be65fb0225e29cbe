//! Seed derivation for the scalars-only payload mode.
//!
//! The client draws every seed of a round from one [`SeedStream`] seeded by a
//! server-issued root. Per step and per outer perturbation `i` the draw order is
//! `s₁`, `Pₛ` inner seeds (positive f₁ direction), the shift `sh`, then `Pₛ`
//! inner seeds (negative f₁ direction, recorded as `s₂ + sh`). Single-block
//! rules draw `P` seeds per step.

use crate::error::{Error, Result};
use crate::perturb::{Seed, SeedSource, SeedStream};

/// Per-step seed layout of a payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedLayout {
    p1: usize,
    /// Inner perturbations per f₁ direction; zero for single-block rules.
    ps: usize,
}

/// A seed position within one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSlot {
    S1(usize),
    Shift(usize),
    S2(usize),
}

impl SeedLayout {
    pub fn new(p1: usize, p2: usize) -> Result<Self> {
        if p1 == 0 {
            return Err(Error::config("P1 must be at least 1"));
        }
        if !p2.is_multiple_of(2 * p1) {
            return Err(Error::config(format!(
                "P2 = {p2} is not a multiple of 2·P1 = {}",
                2 * p1
            )));
        }
        Ok(Self { p1, ps: p2 / (2 * p1) })
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        2 * self.p1 * self.ps
    }

    pub fn is_split(&self) -> bool {
        self.ps > 0
    }

    pub fn seeds_per_step(&self) -> usize {
        if self.is_split() {
            self.p1 * (2 + 2 * self.ps)
        } else {
            self.p1
        }
    }

    /// Draw position of `slot` within a step, plus the shift slot for negative-direction inner seeds.
    fn position(&self, slot: SeedSlot) -> Result<(usize, Option<usize>)> {
        let block = 2 + 2 * self.ps;
        match slot {
            SeedSlot::S1(i) if i < self.p1 => Ok((if self.is_split() { i * block } else { i }, None)),
            SeedSlot::Shift(i) if self.is_split() && i < self.p1 => Ok((i * block + 1 + self.ps, None)),
            SeedSlot::S2(j) if j < self.p2() => {
                let (i, r) = (j / (2 * self.ps), j % (2 * self.ps));
                let base = i * block;
                if r < self.ps {
                    Ok((base + 1 + r, None))
                } else {
                    Ok((base + 2 + r, Some(base + 1 + self.ps)))
                }
            }
            _ => Err(Error::contract(format!("slot {slot:?} outside layout {self:?}"))),
        }
    }
}

/// Regenerates one step's `(S₁, S₂)` by drawing from `source` in client order.
pub fn regenerate_step_seeds(source: &mut dyn SeedSource, layout: &SeedLayout) -> (Vec<Seed>, Vec<Seed>) {
    let mut s1 = Vec::with_capacity(layout.p1);
    let mut s2 = Vec::with_capacity(layout.p2());
    for _ in 0..layout.p1 {
        s1.push(source.next_seed());
        if layout.is_split() {
            s2.extend((0..layout.ps).map(|_| source.next_seed()));
            let shift = source.next_seed();
            s2.extend((0..layout.ps).map(|_| source.next_seed().shifted(shift)));
        }
    }
    (s1, s2)
}

/// The seed the client uses at `slot` of step `k`, derived from the root alone.
pub fn derive_seeds(root: Seed, k: usize, slot: SeedSlot, layout: &SeedLayout) -> Result<Seed> {
    let (pos, shift_pos) = layout.position(slot)?;
    let start = k * layout.seeds_per_step();
    let mut stream = SeedStream::new(root);
    let mut drawn = Vec::with_capacity(pos + 1);
    for _ in 0..start + pos + 1 {
        drawn.push(stream.next_seed());
    }
    let raw = drawn[start + pos];
    Ok(match shift_pos {
        Some(sp) => raw.shifted(drawn[start + sp]),
        None => raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_per_step_audit() {
        let layout = SeedLayout::new(2, 8).unwrap();
        assert_eq!(layout.seeds_per_step(), 2 * (1 + 1 + 2 * 2));
        assert_eq!(SeedLayout::new(5, 0).unwrap().seeds_per_step(), 5);
        assert!(SeedLayout::new(2, 6).is_err());
    }

    #[test]
    fn derived_slots_match_sequential_regeneration() {
        let layout = SeedLayout::new(2, 8).unwrap();
        let root = Seed(0xfeed);
        let mut stream = SeedStream::new(root);
        for k in 0..4 {
            let (s1, s2) = regenerate_step_seeds(&mut stream, &layout);
            for (i, s) in s1.iter().enumerate() {
                assert_eq!(derive_seeds(root, k, SeedSlot::S1(i), &layout).unwrap(), *s);
            }
            for (j, s) in s2.iter().enumerate() {
                assert_eq!(derive_seeds(root, k, SeedSlot::S2(j), &layout).unwrap(), *s);
            }
        }
    }

    #[test]
    fn shifted_slots_add_the_shift() {
        let layout = SeedLayout::new(1, 2).unwrap();
        let root = Seed(3);
        let mut s = SeedStream::new(root);
        let draws: Vec<Seed> = (0..4).map(|_| s.next_seed()).collect();
        assert_eq!(derive_seeds(root, 0, SeedSlot::S1(0), &layout).unwrap(), draws[0]);
        assert_eq!(derive_seeds(root, 0, SeedSlot::S2(0), &layout).unwrap(), draws[1]);
        assert_eq!(derive_seeds(root, 0, SeedSlot::Shift(0), &layout).unwrap(), draws[2]);
        assert_eq!(derive_seeds(root, 0, SeedSlot::S2(1), &layout).unwrap(), draws[3].shifted(draws[2]));
    }

    #[test]
    fn distinct_roots_give_distinct_sequences() {
        let layout = SeedLayout::new(2, 8).unwrap();
        let a = regenerate_step_seeds(&mut SeedStream::new(Seed(1)), &layout);
        let b = regenerate_step_seeds(&mut SeedStream::new(Seed(2)), &layout);
        assert_ne!(a, b);
    }

    #[test]
    fn out_of_layout_slot_rejected() {
        let layout = SeedLayout::new(2, 8).unwrap();
        assert!(derive_seeds(Seed(0), 0, SeedSlot::S1(2), &layout).is_err());
        assert!(derive_seeds(Seed(0), 0, SeedSlot::S2(8), &layout).is_err());
        let single = SeedLayout::new(3, 0).unwrap();
        assert!(derive_seeds(Seed(0), 0, SeedSlot::Shift(0), &single).is_err());
    }
}
