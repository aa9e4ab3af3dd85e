//! Personalized-state checkpoint: a section table wrapping model
//! checkpoints.
//!
//! ```text
//! magic          4 bytes  "FECS"
//! version        u32
//! section_count  u32
//! table          section_count × { tag: 4 bytes, offset: u64, length: u64 }
//! sections       raw bytes, addressed by absolute offset
//! ```
//!
//! Sections, in table order:
//!
//! - `META`: lambda `f64`, scaling scheme `u8` (0 ecl_scaling,
//!   1 ecl_scaling_matrix, 2 no_scaling), expert count `u32`
//! - `ASGN`: sorted class count `u32` and ids `u32…`, then per group a
//!   length `u32` and class ids `u32…`
//! - `GLOB`: retrained global model (model checkpoint bytes)
//! - `EXPT` × expert count: expert models in group order
//!
//! Everything is little-endian.

use crate::data::ExpertAssignment;
use crate::ecl::{PersonalizedState, ScalingScheme};
use crate::error::{Error, Result};
use crate::nncore::{deserialize, serialize};

pub const STATE_MAGIC: [u8; 4] = *b"FECS";
pub const STATE_VERSION: u32 = 1;

const TABLE_ENTRY: usize = 20;

pub fn encode_state(state: &PersonalizedState) -> Vec<u8> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::with_capacity(3 + state.experts.len());

    let mut meta = Vec::with_capacity(13);
    meta.extend_from_slice(&state.lambda.to_le_bytes());
    meta.push(state.scaling.code());
    meta.extend_from_slice(&(state.experts.len() as u32).to_le_bytes());
    sections.push((*b"META", meta));

    let a = &state.assignment;
    let mut asgn = Vec::new();
    let put_list = |buf: &mut Vec<u8>, xs: &[usize]| {
        buf.extend_from_slice(&(xs.len() as u32).to_le_bytes());
        for &x in xs {
            buf.extend_from_slice(&(x as u32).to_le_bytes());
        }
    };
    put_list(&mut asgn, &a.sorted_classes);
    for g in &a.groups {
        put_list(&mut asgn, g);
    }
    sections.push((*b"ASGN", asgn));

    sections.push((*b"GLOB", serialize(&state.retrained_global)));
    for e in &state.experts {
        sections.push((*b"EXPT", serialize(e)));
    }

    let header = 12 + TABLE_ENTRY * sections.len();
    let mut out = Vec::with_capacity(header + sections.iter().map(|(_, s)| s.len()).sum::<usize>());
    out.extend_from_slice(&STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = header as u64;
    for (tag, body) in &sections {
        out.extend_from_slice(tag);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        offset += body.len() as u64;
    }
    for (_, body) in sections {
        out.extend_from_slice(&body);
    }
    out
}

fn le_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Decode("truncated section".into()))
}

fn le_u64(b: &[u8], at: usize) -> Result<u64> {
    b.get(at..at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().expect("8 bytes")))
        .ok_or_else(|| Error::Decode("truncated section".into()))
}

pub fn decode_state(bytes: &[u8]) -> Result<PersonalizedState> {
    if bytes.len() < 12 {
        return Err(Error::Decode("truncated state header".into()));
    }
    if bytes[..4] != STATE_MAGIC {
        return Err(Error::Decode("bad magic, not a personalized-state checkpoint".into()));
    }
    let version = le_u32(bytes, 4)?;
    if version != STATE_VERSION {
        return Err(Error::Decode(format!("unsupported state version {version}")));
    }
    let count = le_u32(bytes, 8)? as usize;
    if count > (bytes.len() - 12) / TABLE_ENTRY {
        return Err(Error::Decode("truncated section table".into()));
    }
    let mut sections = Vec::with_capacity(count);
    let mut end_of_prev = (12 + TABLE_ENTRY * count) as u64;
    for i in 0..count {
        let at = 12 + TABLE_ENTRY * i;
        let tag: [u8; 4] = bytes[at..at + 4].try_into().expect("4 bytes");
        let offset = le_u64(bytes, at + 4)?;
        let len = le_u64(bytes, at + 12)?;
        let end = offset
            .checked_add(len)
            .filter(|&e| offset >= end_of_prev && e <= bytes.len() as u64)
            .ok_or_else(|| Error::Decode(format!("section {i} lies outside the stream or overlaps")))?;
        end_of_prev = end;
        sections.push((tag, &bytes[offset as usize..end as usize]));
    }
    if end_of_prev != bytes.len() as u64 {
        return Err(Error::Decode("trailing bytes after last section".into()));
    }

    let mut it = sections.into_iter();
    let mut expect = |tag: &[u8; 4]| -> Result<&[u8]> {
        match it.next() {
            Some((t, body)) if &t == tag => Ok(body),
            Some((t, _)) => Err(Error::Decode(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&t)
            ))),
            None => Err(Error::Decode(format!(
                "missing section {}",
                String::from_utf8_lossy(tag)
            ))),
        }
    };

    let meta = expect(b"META")?;
    if meta.len() != 13 {
        return Err(Error::Decode("META section must be 13 bytes".into()));
    }
    let lambda = f64::from_le_bytes(meta[..8].try_into().expect("8 bytes"));
    let scaling =
        ScalingScheme::from_code(meta[8]).ok_or_else(|| Error::Decode(format!("unknown scaling code {}", meta[8])))?;
    let num_experts = le_u32(meta, 9)? as usize;

    let asgn = expect(b"ASGN")?;
    let mut pos = 0;
    let mut get_list = || -> Result<Vec<usize>> {
        let n = le_u32(asgn, pos)? as usize;
        pos += 4;
        if n > asgn.len().saturating_sub(pos) / 4 {
            return Err(Error::Decode("truncated assignment list".into()));
        }
        let xs = (0..n)
            .map(|i| le_u32(asgn, pos + 4 * i).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        pos += 4 * n;
        Ok(xs)
    };
    let sorted_classes = get_list()?;
    let groups = (0..num_experts).map(|_| get_list()).collect::<Result<Vec<_>>>()?;
    if pos != asgn.len() {
        return Err(Error::Decode("trailing bytes in ASGN section".into()));
    }

    let retrained_global = deserialize(expect(b"GLOB")?)?;
    let experts = (0..num_experts)
        .map(|_| deserialize(expect(b"EXPT")?))
        .collect::<Result<Vec<_>>>()?;
    if count != 3 + num_experts {
        return Err(Error::Decode(format!("{count} sections for {num_experts} experts")));
    }

    let state = PersonalizedState {
        retrained_global,
        experts,
        assignment: ExpertAssignment { groups, sorted_classes },
        lambda,
        scaling,
    };
    state.validate().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(state)
}
