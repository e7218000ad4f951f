//! Versioned binary parameter file.
//!
//! Layout: `b"PSCK"`, then little-endian `u32` version, in_channels, features,
//! kernel, num_classes, stride, then every parameter as little-endian `f32`
//! in declaration order (conv1 weight, conv1 bias, conv2 weight, conv2 bias).

use super::{ModelParams, ModelShape, ParamSet, IN_CHANNELS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;
/// Sanity bound on any single dimension.
const MAX_DIM: u32 = 1 << 16;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let s = &params.shape;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.values.flatten().len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, IN_CHANNELS as u32, s.features as u32, s.kernel as u32, s.num_classes as u32, s.stride as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (t, _) in params.values.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if word(1) as usize != IN_CHANNELS {
        return Err(bad(format!("expected {IN_CHANNELS} input channels, found {}", word(1))));
    }
    let dims = [word(2), word(3), word(4), word(5)];
    if let Some(d) = dims.iter().find(|&&d| d > MAX_DIM) {
        return Err(bad(format!("dimension {d} exceeds {MAX_DIM}")));
    }
    let shape = ModelShape {
        features: dims[0] as usize,
        kernel: dims[1] as usize,
        num_classes: dims[2] as usize,
        stride: dims[3] as usize,
    };
    shape.validate().map_err(|e| bad(e.to_string()))?;
    let count = shape
        .conv1_len()
        .checked_add(shape.features)
        .and_then(|n| n.checked_add(shape.conv2_len()))
        .and_then(|n| n.checked_add(shape.num_classes))
        .ok_or_else(|| bad("parameter count overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if Some(body.len()) != count.checked_mul(4) {
        return Err(bad(format!("expected {count} f32 values, found {} bytes", body.len())));
    }
    let flat: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("parameter {i} is not finite")));
    }
    let values = ParamSet::zeros(&shape).unflatten_like(&flat);
    Ok(ModelParams { shape, values })
}
