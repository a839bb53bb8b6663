//! Proposal files: magic `OEPR`, `u32` version, `u32` N (cloud size), `u32` K,
//! then per proposal `f32` confidence, `u32` count and `count` strictly
//! increasing `u32` point indices.

use std::path::Path;

use super::{read_bytes, write_bytes, DataError};
use crate::aggregation::Proposal3D;
use crate::binio::{BinError, Decoder, Encoder};
use crate::mask::PointSet;

const PROPOSAL_MAGIC: &[u8; 4] = b"OEPR";
const PROPOSAL_VERSION: u32 = 1;

pub fn encode_proposals(num_points: usize, proposals: &[Proposal3D]) -> Vec<u8> {
    let mut enc = Encoder::with_header(PROPOSAL_MAGIC, PROPOSAL_VERSION);
    enc.u32(num_points as u32);
    enc.u32(proposals.len() as u32);
    for p in proposals {
        enc.f32(p.confidence());
        enc.u32(p.points().len() as u32);
        enc.u32s(p.points().as_slice());
    }
    enc.finish()
}

/// Returns the cloud size recorded in the file and the proposals.
pub fn decode_proposals(bytes: &[u8]) -> Result<(usize, Vec<Proposal3D>), BinError> {
    let mut dec = Decoder::with_header(bytes, PROPOSAL_MAGIC, PROPOSAL_VERSION)?;
    let num_points = dec.u32()? as usize;
    let count = dec.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for k in 0..count {
        let at = dec.offset();
        let confidence = dec.f32()?;
        let n = dec.u32()? as usize;
        let indices = dec.u32s(n)?;
        let invalid = |message: String| BinError::Invalid { offset: at, message };
        let points = PointSet::from_sorted(indices).map_err(|e| invalid(format!("proposal {k}: {e}")))?;
        if let Some(max) = points.max() {
            if max as usize >= num_points {
                return Err(invalid(format!("proposal {k}: point {max} >= N = {num_points}")));
            }
        }
        let p = Proposal3D::new(points, confidence).map_err(|e| invalid(format!("proposal {k}: {e}")))?;
        out.push(p);
    }
    dec.finish()?;
    Ok((num_points, out))
}

pub fn save_proposals(num_points: usize, proposals: &[Proposal3D], path: &Path) -> Result<(), DataError> {
    write_bytes(path, &encode_proposals(num_points, proposals))
}

pub fn load_proposals(path: &Path) -> Result<(usize, Vec<Proposal3D>), DataError> {
    decode_proposals(&read_bytes(path)?).map_err(|e| DataError::binary(path, e))
}
