//! Checkpoint encoding.
//!
//! ```text
//! magic        4 bytes  "FECL"
//! version      u32      FORMAT_VERSION
//! input_dim    u32
//! num_blocks   u32
//! block_width  u32 × num_blocks
//! num_classes  u32
//! init_seed    u64
//! parameters   f32 × N  block 0 weight (row-major), block 0 bias, …,
//!                       classifier weight, classifier bias
//! ```
//!
//! All integers and floats are little-endian. The freeze mask is a
//! training-time attribute and is not stored.

use super::model::{ArchSpec, Layer, ModelParams};
use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FECL";
pub const FORMAT_VERSION: u32 = 1;

pub fn serialize(model: &ModelParams) -> Vec<u8> {
    let arch = model.arch();
    let mut out = Vec::with_capacity(24 + 4 * arch.block_widths.len() + 4 * model.num_values());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.block_widths.len() as u32).to_le_bytes());
    for &w in &arch.block_widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(arch.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&arch.init_seed.to_le_bytes());
    for v in model.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Decode(format!("truncated stream while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Decode("bad magic, not a model checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Decode(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let input_dim = r.u32("input_dim")? as usize;
    let num_blocks = r.u32("num_blocks")? as usize;
    // each width takes 4 bytes, so this bounds the allocation by the input size
    if num_blocks > bytes.len() / 4 {
        return Err(Error::Decode(format!(
            "truncated stream: {num_blocks} block widths declared"
        )));
    }
    let mut block_widths = Vec::with_capacity(num_blocks);
    for _ in 0..num_blocks {
        block_widths.push(r.u32("block width")? as usize);
    }
    let num_classes = r.u32("num_classes")? as usize;
    let init_seed = r.u64("init_seed")?;
    let arch = ArchSpec {
        input_dim,
        block_widths,
        num_classes,
        init_seed,
    };
    arch.validate()
        .map_err(|e| Error::Decode(format!("invalid architecture: {e}")))?;

    let expected = arch
        .layer_dims()
        .iter()
        .try_fold(0usize, |acc, &(i, o)| {
            acc.checked_add(o.checked_mul(i)?.checked_add(o)?)
        })
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Decode("parameter count overflows".into()))?;
    let remaining = bytes.len() - r.pos;
    if remaining < expected {
        return Err(Error::Decode(format!(
            "truncated stream: {remaining} parameter bytes, expected {expected}"
        )));
    }
    if remaining > expected {
        return Err(Error::Decode(format!(
            "{} trailing bytes after parameters",
            remaining - expected
        )));
    }

    let mut floats = r
        .take(expected, "parameters")?
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let mut layers = Vec::with_capacity(arch.block_widths.len() + 1);
    for (fan_in, fan_out) in arch.layer_dims() {
        let weight: Vec<f64> = floats.by_ref().take(fan_in * fan_out).collect();
        let bias: Vec<f64> = floats.by_ref().take(fan_out).collect();
        layers.push(Layer {
            weight: Matrix::from_vec(fan_out, fan_in, weight)?,
            bias,
        });
    }
    let classifier = layers.pop().expect("classifier");
    ModelParams::from_layers(arch, layers, classifier).map_err(|e| Error::Decode(e.to_string()))
}
