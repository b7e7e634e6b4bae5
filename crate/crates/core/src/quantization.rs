//! Per-tensor affine scalar quantization.
//!
//! A tensor with range `[min, max]` is stored as `b`-bit integers
//! `q = round((x - min) / scale)` with `scale = (max - min) / (2^b - 1)`, and
//! read back as `min + q·scale`. Constant tensors get `scale = 0` and come back
//! exactly.

use crate::checkpoint::{Checkpoint, TensorData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub bits: u32,
    pub scale: f64,
    pub zero_point: f64,
    pub numel: usize,
    /// Little-endian packed integers, `⌈numel·bits/8⌉` bytes.
    pub payload: Vec<u8>,
}

pub fn payload_len(numel: usize, bits: u32) -> usize {
    (numel * bits as usize).div_ceil(8)
}

fn check_bits(bits: u32) -> Result<()> {
    match bits {
        8 | 16 => Ok(()),
        _ => Err(Error::UnsupportedBits(bits)),
    }
}

pub fn quantize(name: &str, values: &[f32], bits: u32) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteTensor(name.to_string()));
    }
    let min = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let levels = ((1u32 << bits) - 1) as f64;
    let (zero_point, scale) = if values.is_empty() {
        (0.0, 0.0)
    } else {
        (min, (max - min) / levels)
    };
    let mut payload = Vec::with_capacity(payload_len(values.len(), bits));
    for &v in values {
        let q = if scale > 0.0 {
            ((v as f64 - zero_point) / scale).round().clamp(0.0, levels)
        } else {
            0.0
        };
        match bits {
            8 => payload.push(q as u8),
            _ => payload.extend_from_slice(&(q as u16).to_le_bytes()),
        }
    }
    Ok(QuantizedTensor {
        bits,
        scale,
        zero_point,
        numel: values.len(),
        payload,
    })
}

impl QuantizedTensor {
    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        let want = payload_len(self.numel, self.bits);
        if self.payload.len() != want {
            return Err(Error::MalformedCheckpoint(format!(
                "quantized payload is {} bytes, expected {want}",
                self.payload.len()
            )));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0 && self.zero_point.is_finite()) {
            return Err(Error::MalformedCheckpoint("bad quantization scale".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<u32> {
        match self.bits {
            8 => self.payload.iter().map(|&b| b as u32).collect(),
            _ => self
                .payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
                .collect(),
        }
    }

    /// Reconstructed values before rounding to `f32`.
    pub fn values_f64(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(self
            .levels()
            .into_iter()
            .map(|q| self.zero_point + q as f64 * self.scale)
            .collect())
    }

    pub fn dequantize(&self) -> Result<Vec<f32>> {
        Ok(self.values_f64()?.into_iter().map(|v| v as f32).collect())
    }
}

/// Bytes spent on tensor payloads before and after quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeReport {
    pub before: usize,
    pub after: usize,
}

impl SizeReport {
    pub fn ratio(&self) -> f64 {
        self.before as f64 / self.after.max(1) as f64
    }
}

/// Quantizes every float tensor whose name does not start with one of
/// `exclude`. Config, vocabulary and codebooks are carried over untouched.
pub fn quantize_checkpoint(ckpt: &Checkpoint, bits: u32, exclude: &[String]) -> Result<(Checkpoint, SizeReport)> {
    check_bits(bits)?;
    let mut out = ckpt.clone();
    for t in &mut out.tensors {
        if exclude.iter().any(|p| t.name.starts_with(p.as_str())) {
            continue;
        }
        if let TensorData::F32(values) = &t.data {
            t.data = TensorData::Quantized(quantize(&t.name, values, bits)?);
        }
    }
    let report = SizeReport {
        before: ckpt.tensor_section_bytes(),
        after: out.tensor_section_bytes(),
    };
    Ok((out, report))
}

pub fn dequantize_checkpoint(ckpt: &Checkpoint) -> Result<Checkpoint> {
    let mut out = ckpt.clone();
    for t in &mut out.tensors {
        if let TensorData::Quantized(q) = &t.data {
            t.data = TensorData::F32(q.dequantize()?);
        }
    }
    Ok(out)
}
