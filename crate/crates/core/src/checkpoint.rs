//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WESTCKPT" u32 version
//! str config            canonical key = value text
//! str vocabulary
//! u32 count, then per codebook: str name, str serialized codebook
//! u32 count, then per tensor:
//!     str name, u8 encoding, u32 rank, u64 dims[rank]
//!     encoding 0: f32 values, row-major
//!     encoding 1: u8 bits, f64 scale, f64 zero_point, packed integers
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::path::Path;
use std::sync::Arc;

use crate::codebook::{deserialize_codebook, serialize_codebook, CodeKind, Codebook};
use crate::config::RunConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::params::Parameters;
use crate::quantization::{payload_len, QuantizedTensor};

pub const MAGIC: &[u8; 8] = b"WESTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Quantized(QuantizedTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_bytes(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => 4 * v.len(),
            TensorData::Quantized(q) => q.payload.len(),
        }
    }

    pub fn to_f32(&self) -> Result<Vec<f32>> {
        match &self.data {
            TensorData::F32(v) => Ok(v.clone()),
            TensorData::Quantized(q) => q.dequantize(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        put_str(out, &self.name);
        out.push(match self.data {
            TensorData::F32(_) => 0,
            TensorData::Quantized(_) => 1,
        });
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::Quantized(q) => {
                out.push(q.bits as u8);
                out.extend_from_slice(&q.scale.to_le_bytes());
                out.extend_from_slice(&q.zero_point.to_le_bytes());
                out.extend_from_slice(&q.payload);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub vocabulary: String,
    pub codebooks: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(config: &RunConfig, vocab: &Vocabulary, model: &LanguageModel<f32>) -> Self {
        let (emb, soft) = model.codebooks();
        let mut codebooks = Vec::new();
        for (name, cb) in [("emb", emb), ("soft", soft)] {
            if let Some(cb) = cb {
                codebooks.push((name.to_string(), serialize_codebook(&cb, cb.kind() == CodeKind::Language)));
            }
        }
        let tensors = model
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name,
                dims: p.dims,
                data: TensorData::F32(p.data.to_vec()),
            })
            .collect();
        Self {
            config: config.to_text(),
            vocabulary: vocab.to_text(),
            codebooks,
            tensors,
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::from_text(&self.vocabulary)
    }

    pub fn codebook(&self, name: &str) -> Result<Option<Arc<Codebook>>> {
        self.codebooks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, text)| deserialize_codebook(text).map(Arc::new))
            .transpose()
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the model, dequantizing quantized tensors.
    pub fn to_model(&self) -> Result<LanguageModel<f32>> {
        let cfg = self.run_config()?;
        let mut model = LanguageModel::zeros(cfg.model_config(), self.codebook("emb")?, self.codebook("soft")?)?;
        let mut params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for p in &mut params {
            let t = self
                .tensor(&p.name)
                .ok_or_else(|| Error::MalformedCheckpoint(format!("missing tensor {}", p.name)))?;
            if t.dims != p.dims {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {}: stored {:?}, config implies {:?}",
                    p.name, t.dims, p.dims
                )));
            }
            p.data.copy_from_slice(&t.to_f32()?);
        }
        drop(params);
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.vocabulary);
        out.extend_from_slice(&(self.codebooks.len() as u32).to_le_bytes());
        for (name, text) in &self.codebooks {
            put_str(&mut out, name);
            put_str(&mut out, text);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            t.write(&mut out);
        }
        out
    }

    /// Serialized size of the tensor records, headers included.
    pub fn tensor_section_bytes(&self) -> usize {
        let mut buf = Vec::new();
        for t in &self.tensors {
            t.write(&mut buf);
        }
        buf.len()
    }

    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(NamedTensor::payload_bytes).sum()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::MalformedCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::MalformedCheckpoint(format!("unsupported version {version}")));
        }
        let config = r.str()?;
        let vocabulary = r.str()?;
        let mut codebooks = Vec::new();
        for _ in 0..r.u32()? {
            codebooks.push((r.str()?, r.str()?));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedCheckpoint("trailing bytes".into()));
        }
        Ok(Self {
            config,
            vocabulary,
            codebooks,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::MalformedCheckpoint("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<NamedTensor> {
        let name = self.str()?;
        let encoding = self.u8()?;
        let rank = self.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::MalformedCheckpoint(format!("tensor {name}: dims overflow")))?;
        let data = match encoding {
            0 => {
                let raw = self.take(numel.checked_mul(4).ok_or_else(|| Error::MalformedCheckpoint("too large".into()))?)?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            }
            1 => {
                let bits = self.u8()? as u32;
                let scale = self.f64()?;
                let zero_point = self.f64()?;
                if bits != 8 && bits != 16 {
                    return Err(Error::MalformedCheckpoint(format!("tensor {name}: {bits}-bit payload")));
                }
                let payload = self.take(payload_len(numel, bits))?.to_vec();
                let q = QuantizedTensor {
                    bits,
                    scale,
                    zero_point,
                    numel,
                    payload,
                };
                q.validate()?;
                TensorData::Quantized(q)
            }
            e => return Err(Error::MalformedCheckpoint(format!("tensor {name}: unknown encoding {e}"))),
        };
        Ok(NamedTensor { name, dims, data })
    }
}
