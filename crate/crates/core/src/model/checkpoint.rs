//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`; tensor values are little-endian
//! IEEE-754 `f32`.
//!
//! ```text
//! magic        4 bytes   "HCCT"
//! version      u32       1
//! meta_len     u32
//! meta         meta_len bytes of UTF-8 `key = value` text (model config,
//!              optional training state)
//! count        u32       number of tensors
//! count times:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   ndim       u32       at most 8
//!   dims       ndim x u32
//!   values     product(dims) x f32
//! ```
//!
//! Nothing may follow the last tensor. Names are unique.

use std::path::Path;

use super::config::ModelConfig;
use super::hcct::HcctModel;
use crate::config::KeyValues;
use crate::error::{bail, Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCCT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: KeyValues,
    pub tensors: Vec<NamedTensor>,
}

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                expected: (self.pos as u64).saturating_add(n as u64),
                actual: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let Some(len) = count.checked_mul(4) else {
            bail!(Format, "tensor of {count} values overflows");
        };
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push<F: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<F>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: tensor.shape().clone(),
            values: tensor.data().iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    /// Parameters and batch-norm buffers of `model`, with its config in the
    /// metadata.
    pub fn from_model<F: Real>(model: &HcctModel<F>) -> Result<Self> {
        let mut ckpt = Checkpoint::default();
        model.config.write_to(&mut ckpt.meta)?;
        for (name, t) in model.named_params() {
            ckpt.push(name, t);
        }
        for (name, t) in model.named_buffers() {
            ckpt.push(name, t);
        }
        Ok(ckpt)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig::read_from(&self.meta, &ModelConfig::desk())?;
        for key in [
            "model.input_extent",
            "model.conv_channels",
            "model.embed_dim",
            "model.num_layers",
            "model.num_classes",
        ] {
            if self.meta.get(key).is_none() {
                bail!(Format, "checkpoint metadata lacks {key}");
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rebuilds the model; every parameter and buffer must be present with
    /// the shape the stored config implies.
    pub fn to_model<F: Real>(&self) -> Result<HcctModel<F>> {
        let config = self.model_config()?;
        let mut model = HcctModel::<F>::new(config, 0)?;
        for (name, slot) in model.named_params_mut() {
            self.fill(&name, slot, true)?;
        }
        for (name, slot) in model.named_buffers_mut() {
            self.fill(&name, slot, false)?;
        }
        Ok(model)
    }

    fn fill<F: Real>(&self, name: &str, slot: &mut Tensor<F>, requires_grad: bool) -> Result<()> {
        let Some(stored) = self.get(name) else {
            bail!(Format, "checkpoint lacks tensor {name:?}");
        };
        if stored.shape.dims() != slot.dims() {
            bail!(
                Format,
                "tensor {name:?} has shape {}, model expects {}",
                stored.shape,
                slot.shape()
            );
        }
        let data = stored.values.iter().map(|&v| F::lit(f64::from(v))).collect();
        *slot = Tensor::from_vec(stored.shape.clone(), data)?.with_grad(requires_grad);
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = self.meta.render();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.rank() as u32).to_le_bytes());
            for &d in t.shape.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            bail!(Format, "not a checkpoint: bad magic");
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            bail!(Format, "unsupported checkpoint version {version}");
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata is not UTF-8: {e}")))?;
        let meta = KeyValues::parse(meta)?;
        let count = r.u32()?;
        let mut tensors: Vec<NamedTensor> = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            if tensors.iter().any(|t| t.name == name) {
                bail!(Format, "duplicate tensor {name:?}");
            }
            let rank = r.u32()?;
            if rank > MAX_RANK {
                bail!(Format, "tensor {name:?} has rank {rank} > {MAX_RANK}");
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                numel = match numel.checked_mul(d) {
                    Some(n) => n,
                    None => bail!(Format, "tensor {name:?} size overflows"),
                };
                dims.push(d);
            }
            let values = r.f32s(numel)?;
            if values.iter().any(|v| !v.is_finite()) {
                bail!(Format, "tensor {name:?} holds non-finite values");
            }
            tensors.push(NamedTensor {
                name,
                shape: Shape::new(dims),
                values,
            });
        }
        if r.remaining() != 0 {
            bail!(
                Format,
                "{} trailing bytes after checkpoint at offset {}",
                r.remaining(),
                r.position()
            );
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
