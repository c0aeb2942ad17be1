//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "MSSM"                      magic
//! u32                         format version
//! u32 + bytes                 model config as TOML
//! u32                         tensor count
//! per tensor:
//!   u32 + bytes               name
//!   u8                        dtype code (0 f32, 1 f64, 2 int8)
//!   u32, u64 × rank           rank and dims
//!   [f32]                     scale, int8 only
//!   payload                   row-major values
//! u32                         CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::model::classifier::MambaClassifier;
use crate::model::config::ModelConfig;
use crate::model::quant::{QuantTensor, QuantizedModel, StoredTensor};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"MSSM";
pub const VERSION: u32 = 1;
const INT8_CODE: u8 = 2;

/// Tensor payload as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum RawTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    Int8(QuantTensor),
}

impl RawTensor {
    pub fn to_scalar<T: Scalar>(&self) -> Result<Tensor<T>> {
        Ok(match self {
            RawTensor::F32(t) => t.cast(),
            RawTensor::F64(t) => t.cast(),
            RawTensor::Int8(q) => q.dequantize()?.cast(),
        })
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, RawTensor::Int8(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, RawTensor)>,
}

impl RawCheckpoint {
    pub fn is_quantized(&self) -> bool {
        self.tensors.iter().any(|(_, t)| t.is_quantized())
    }

    /// Builds a model in precision `T`, dequantizing int8 tensors.
    pub fn into_model<T: Scalar>(self) -> Result<MambaClassifier<T>> {
        let tensors = self
            .tensors
            .iter()
            .map(|(n, t)| Ok((n.clone(), t.to_scalar()?)))
            .collect::<Result<Vec<_>>>()?;
        MambaClassifier::from_named_tensors(self.config, tensors)
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len_prefixed(&mut self, bytes: &[u8]) {
        self.u32(u32::try_from(bytes.len()).expect("field under 4 GiB"));
        self.buf.extend_from_slice(bytes);
    }

    fn header(&mut self, code: u8, shape: &[usize]) {
        self.buf.push(code);
        self.u32(shape.len() as u32);
        for &d in shape {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }

    fn tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.len_prefixed(name.as_bytes());
        self.header(T::DTYPE.code(), t.shape());
        for &v in t.data() {
            v.write_le(&mut self.buf);
        }
    }

    fn quant(&mut self, name: &str, q: &QuantTensor) {
        self.len_prefixed(name.as_bytes());
        self.header(INT8_CODE, &q.shape);
        self.buf.extend_from_slice(&q.scale.to_le_bytes());
        self.buf.extend(q.values.iter().map(|&v| v as u8));
    }
}

fn begin(config: &ModelConfig, count: usize) -> Result<Writer> {
    let text = toml::to_string(config).map_err(|e| Error::Parse {
        what: "model config".into(),
        detail: e.to_string(),
    })?;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.len_prefixed(text.as_bytes());
    w.u32(count as u32);
    Ok(w)
}

fn finish(mut w: Writer) -> Vec<u8> {
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn encode_checkpoint<T: Scalar>(m: &MambaClassifier<T>) -> Result<Vec<u8>> {
    let named = m.named_tensors();
    let mut w = begin(&m.config, named.len())?;
    for (name, t) in named {
        w.tensor(&name, t);
    }
    Ok(finish(w))
}

pub fn encode_quantized(q: &QuantizedModel) -> Result<Vec<u8>> {
    let mut w = begin(&q.config, q.tensors.len())?;
    for (name, t) in &q.tensors {
        match t {
            StoredTensor::F32(t) => w.tensor(name, t),
            StoredTensor::Int8(q) => w.quant(name, q),
        }
    }
    Ok(finish(w))
}

pub fn save_checkpoint<T: Scalar>(m: &MambaClassifier<T>, path: &Path) -> Result<()> {
    fsio::atomic_write(path, &encode_checkpoint(m)?)
}

pub fn save_quantized(q: &QuantizedModel, path: &Path) -> Result<()> {
    fsio::atomic_write(path, &encode_quantized(q)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Malformed(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
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

    fn len_prefixed(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn floats<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        let width = T::DTYPE.size();
        let bytes = self.take(numel.checked_mul(width).ok_or_else(|| Error::Malformed("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(width).map(T::read_le).collect();
        Tensor::new(shape, data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() >= 8 {
        let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if found != VERSION {
            return Err(Error::VersionMismatch {
                found,
                supported: VERSION,
            });
        }
    }
    if bytes.len() < 12 {
        return Err(Error::ChecksumMismatch {
            stored: 0,
            computed: crc32fast::hash(bytes),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let text = std::str::from_utf8(r.len_prefixed()?)
        .map_err(|e| Error::Malformed(format!("config is not UTF-8: {e}")))?;
    let config: ModelConfig = toml::from_str(text).map_err(|e| Error::Parse {
        what: "checkpoint config".into(),
        detail: e.to_string(),
    })?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(r.len_prefixed()?.to_vec())
            .map_err(|e| Error::Malformed(format!("tensor name is not UTF-8: {e}")))?;
        let code = r.u8()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| Ok(r.u64()? as usize))
            .collect::<Result<Vec<_>>>()?;
        let t = match code {
            c if c == DType::F32.code() => RawTensor::F32(r.floats(&shape)?),
            c if c == DType::F64.code() => RawTensor::F64(r.floats(&shape)?),
            INT8_CODE => {
                let scale = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
                let numel: usize = shape.iter().product();
                let values = r.take(numel)?.iter().map(|&b| b as i8).collect();
                RawTensor::Int8(QuantTensor { shape, values, scale })
            }
            other => return Err(Error::Malformed(format!("unknown dtype code {other}"))),
        };
        tensors.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after tensor table",
            body.len() - r.pos
        )));
    }
    Ok(RawCheckpoint { config, tensors })
}

pub fn read_checkpoint(path: &Path) -> Result<RawCheckpoint> {
    decode_checkpoint(&fsio::read(path)?)
}

/// Loads any checkpoint (f32, f64 or int8) into precision `T`.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<MambaClassifier<T>> {
    read_checkpoint(path)?.into_model()
}
