//! Federated rounds: client local training, scalar/seed payloads, and
//! server-side reconstruction plus averaging.

mod client;
mod codec;
mod round;
mod seeds;
mod server;

pub use crate::zo::StepRecord;
pub use client::{client_train, fo_client_train, ClientOutcome, ClientTask};
pub use codec::{decode_payload, encode_payload, PAYLOAD_MAGIC, PAYLOAD_VERSION};
pub use round::{plan_round, run_round, RoundConfig, RoundOutput, RoundPlan, TrainRule};
pub use seeds::{derive_seeds, regenerate_step_seeds, SeedLayout, SeedSlot};
pub use server::{aggregate, client_root_seed, client_sampler, reconstruct};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::Seed;
use crate::zo::{CycleKind, SplitConfig};

/// Whether seeds travel with the payload or are re-derived from a server-issued root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    WithSeeds,
    ScalarsOnly,
}

impl PayloadMode {
    pub fn flag(self) -> u8 {
        match self {
            PayloadMode::WithSeeds => 0,
            PayloadMode::ScalarsOnly => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(PayloadMode::WithSeeds),
            1 => Some(PayloadMode::ScalarsOnly),
            _ => None,
        }
    }
}

/// Zero-order local update rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ZoRule {
    /// Split perturbation over θ₁ / θ₂.
    Split(SplitConfig),
    /// Whole-model central difference with `p` perturbations.
    Central { p: usize, eps: f64, mu: f64 },
    /// Whole-model forward difference with `p` perturbations.
    Forward { p: usize, eps: f64, mu: f64 },
}

impl ZoRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ZoRule::Split(cfg) => cfg.validate(),
            ZoRule::Central { p, eps, mu } | ZoRule::Forward { p, eps, mu } => {
                if p == 0 {
                    return Err(Error::config("P must be at least 1"));
                }
                if !(eps > 0.0 && eps.is_finite() && mu > 0.0 && mu.is_finite()) {
                    return Err(Error::config("ε and μ must be positive and finite"));
                }
                Ok(())
            }
        }
    }

    pub fn mu(&self) -> f64 {
        match *self {
            ZoRule::Split(cfg) => cfg.mu,
            ZoRule::Central { mu, .. } | ZoRule::Forward { mu, .. } => mu,
        }
    }

    pub fn eps(&self) -> f64 {
        match *self {
            ZoRule::Split(cfg) => cfg.eps,
            ZoRule::Central { eps, .. } | ZoRule::Forward { eps, .. } => eps,
        }
    }

    /// Perturbation passes each seed goes through during estimation.
    pub fn cycle_kind(&self) -> CycleKind {
        match self {
            ZoRule::Split(_) | ZoRule::Central { .. } => CycleKind::Central,
            ZoRule::Forward { .. } => CycleKind::Forward,
        }
    }

    /// Seed counts `(P1, P2)` recorded per step; single-block rules use `(P, 0)`.
    pub fn seed_counts(&self) -> (usize, usize) {
        match *self {
            ZoRule::Split(cfg) => (cfg.p1, cfg.p2),
            ZoRule::Central { p, .. } | ZoRule::Forward { p, .. } => (p, 0),
        }
    }

    pub fn layout(&self) -> SeedLayout {
        let (p1, p2) = self.seed_counts();
        SeedLayout::new(p1, p2).expect("validated rule")
    }
}

/// Index where θ₂ starts for a payload: `d1` for split payloads, `d` otherwise.
pub fn update_boundary(p2: usize, d1: usize, d: usize) -> usize {
    if p2 == 0 {
        d
    } else {
        d1
    }
}

/// One client's upload for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientPayload {
    pub client_id: u32,
    pub round_id: u32,
    pub mode: PayloadMode,
    pub p1: u32,
    pub p2: u32,
    /// Present exactly in scalars-only mode.
    pub root_seed: Option<Seed>,
    pub steps: Vec<StepRecord>,
}

impl ClientPayload {
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::Format {
            what: "payload",
            detail,
        };
        SeedLayout::new(self.p1 as usize, self.p2 as usize).map_err(|e| bad(e.to_string()))?;
        match self.mode {
            PayloadMode::ScalarsOnly => {
                if self.root_seed.is_none() {
                    return Err(bad("scalars-only payload carries no root seed".into()));
                }
                if self.steps.iter().any(|s| !s.s1.is_empty() || !s.s2.is_empty()) {
                    return Err(bad("scalars-only payload carries seed lists".into()));
                }
            }
            PayloadMode::WithSeeds => {
                if self.root_seed.is_some() {
                    return Err(bad("with-seeds payload carries a root seed".into()));
                }
                for (k, s) in self.steps.iter().enumerate() {
                    if s.s1.len() != self.p1 as usize || s.s2.len() != self.p2 as usize {
                        return Err(bad(format!(
                            "step {k} has {}+{} seeds, expected {}+{}",
                            s.s1.len(),
                            s.s2.len(),
                            self.p1,
                            self.p2
                        )));
                    }
                }
            }
        }
        if let Some((k, _)) = self
            .steps
            .iter()
            .enumerate()
            .find(|(_, s)| !s.g1.is_finite() || !s.g2.is_finite())
        {
            return Err(bad(format!("step {k} has a non-finite scalar")));
        }
        Ok(())
    }

    /// Serialized length, from the header fields alone.
    pub fn wire_len(&self) -> u64 {
        crate::cost::payload_bytes(self.k() as u64, self.p1 as u64, self.p2 as u64, self.mode)
    }
}
