//! Payload wire format, little-endian throughout:
//!
//! ```text
//! "FSPB" | version u32 | client_id u32 | round_id u32 | mode u8 | K u32 | P1 u32 | P2 u32
//! [root_seed u64]                       -- scalars-only mode
//! K × ( g1 f64 | g2 f64 | [S1 ‖ S2 as (P1+P2) × u64] )   -- seeds in with-seeds mode
//! ```

use super::{ClientPayload, PayloadMode, StepRecord};
use crate::error::{Error, Result};
use crate::perturb::Seed;

pub const PAYLOAD_MAGIC: &[u8; 4] = b"FSPB";
pub const PAYLOAD_VERSION: u32 = 1;

pub fn encode_payload(payload: &ClientPayload) -> Result<Vec<u8>> {
    payload.validate()?;
    let mut out = Vec::with_capacity(payload.wire_len() as usize);
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.extend_from_slice(&PAYLOAD_VERSION.to_le_bytes());
    out.extend_from_slice(&payload.client_id.to_le_bytes());
    out.extend_from_slice(&payload.round_id.to_le_bytes());
    out.push(payload.mode.flag());
    out.extend_from_slice(&(payload.k() as u32).to_le_bytes());
    out.extend_from_slice(&payload.p1.to_le_bytes());
    out.extend_from_slice(&payload.p2.to_le_bytes());
    if let Some(root) = payload.root_seed {
        out.extend_from_slice(&root.0.to_le_bytes());
    }
    for step in &payload.steps {
        out.extend_from_slice(&step.g1.to_le_bytes());
        out.extend_from_slice(&step.g2.to_le_bytes());
        for seed in step.s1.iter().chain(&step.s2) {
            out.extend_from_slice(&seed.0.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format {
                what: "payload",
                detail: format!("truncated at byte {} (need {n} more)", self.pos),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_payload(bytes: &[u8]) -> Result<ClientPayload> {
    let bad = |detail: String| Error::Format {
        what: "payload",
        detail,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PAYLOAD_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != PAYLOAD_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let client_id = r.u32()?;
    let round_id = r.u32()?;
    let flag = r.take(1)?[0];
    let mode = PayloadMode::from_flag(flag).ok_or_else(|| bad(format!("mode flag {flag}")))?;
    let k = r.u32()? as usize;
    let p1 = r.u32()?;
    let p2 = r.u32()?;
    let expected = crate::cost::payload_bytes(k as u64, p1 as u64, p2 as u64, mode);
    if expected != bytes.len() as u64 {
        return Err(bad(format!(
            "length {} does not match header (expected {expected})",
            bytes.len()
        )));
    }
    let root_seed = match mode {
        PayloadMode::ScalarsOnly => Some(Seed(r.u64()?)),
        PayloadMode::WithSeeds => None,
    };
    let mut steps = Vec::with_capacity(k);
    for _ in 0..k {
        let g1 = r.f64()?;
        let g2 = r.f64()?;
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        if mode == PayloadMode::WithSeeds {
            for _ in 0..p1 {
                s1.push(Seed(r.u64()?));
            }
            for _ in 0..p2 {
                s2.push(Seed(r.u64()?));
            }
        }
        steps.push(StepRecord { g1, g2, s1, s2 });
    }
    let payload = ClientPayload {
        client_id,
        round_id,
        mode,
        p1,
        p2,
        root_seed,
        steps,
    };
    payload.validate()?;
    Ok(payload)
}
