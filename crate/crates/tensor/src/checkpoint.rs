//! `BWCK` tensor container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "BWCK" | version | count | count × entry
//! entry = name_len | name (UTF-8) | ndim | dims[ndim] | f32 data (LE)
//! ```
//!
//! Optimizer state shares the container under the `optim/` prefix.

use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BWCK";
pub const VERSION: u32 = 1;
pub const OPTIM_PREFIX: &str = "optim/";

const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn from_params(params: &ParamStore) -> Self {
        let mut c = Self::new();
        for (_, name, t) in params.iter() {
            c.push(name, Tensor::new(t.shape(), t.data().to_vec()).expect("consistent"));
        }
        c
    }

    /// Parameters only (entries outside the `optim/` namespace).
    pub fn params(&self) -> Result<ParamStore> {
        let mut p = ParamStore::new();
        for (name, t) in &self.entries {
            if !name.starts_with(OPTIM_PREFIX) && !name.starts_with("train/") {
                p.insert(name.clone(), t.clone())?;
            }
        }
        Ok(p)
    }

    pub fn add_optimizer(&mut self, state: &AdamState, params: &ParamStore) {
        let c = &state.config;
        let hyper = [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay].map(|v| v as f32);
        self.push(format!("{OPTIM_PREFIX}hyper"), Tensor::new(&[5], hyper.to_vec()).expect("5"));
        for (id, name, _) in params.iter() {
            let i = id.index();
            let shape = params.get(id).shape();
            self.push(format!("{OPTIM_PREFIX}step/{name}"), Tensor::scalar(state.steps[i] as f32));
            self.push(format!("{OPTIM_PREFIX}m/{name}"), Tensor::new(shape, state.first[i].clone()).expect("shape"));
            self.push(format!("{OPTIM_PREFIX}v/{name}"), Tensor::new(shape, state.second[i].clone()).expect("shape"));
        }
    }

    /// Rebuilds optimizer state for `params` from this container.
    pub fn optimizer(&self, params: &ParamStore) -> Result<AdamState> {
        let missing = |n: &str| TensorError::Checkpoint(format!("missing tensor {n}"));
        let hyper_name = format!("{OPTIM_PREFIX}hyper");
        let hyper = self.get(&hyper_name).ok_or_else(|| missing(&hyper_name))?;
        let h = hyper.data();
        if h.len() != 5 {
            return Err(TensorError::Checkpoint("optimizer hyperparameters must hold 5 values".into()));
        }
        let config = AdamConfig { lr: h[0] as f64, beta1: h[1] as f64, beta2: h[2] as f64, eps: h[3] as f64, weight_decay: h[4] as f64 };
        let mut state = AdamState::new(config, params);
        for (id, name, t) in params.iter() {
            let i = id.index();
            let fetch = |kind: &str| -> Result<&Tensor> {
                let n = format!("{OPTIM_PREFIX}{kind}/{name}");
                let found = self.get(&n).ok_or_else(|| missing(&n))?;
                Ok(found)
            };
            let m = fetch("m")?;
            let v = fetch("v")?;
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(TensorError::Checkpoint(format!("moment shape mismatch for {name}")));
            }
            state.first[i] = m.data().to_vec();
            state.second[i] = v.data().to_vec();
            state.steps[i] = fetch("step")?.data()[0] as u64;
        }
        Ok(state)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Checkpoint("bad magic, expected BWCK".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name =
                std::str::from_utf8(r.take(len)?).map_err(|_| TensorError::Checkpoint("entry name is not UTF-8".into()))?.to_string();
            let ndim = r.u32()? as usize;
            if ndim > MAX_NDIM {
                return Err(TensorError::Checkpoint(format!("{name}: rank {ndim} exceeds {MAX_NDIM}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = r.u32()? as usize;
                numel = numel.checked_mul(d).ok_or_else(|| TensorError::Checkpoint(format!("{name}: element count overflows")))?;
                shape.push(d);
            }
            let nbytes = numel.checked_mul(4).ok_or_else(|| TensorError::Checkpoint(format!("{name}: size overflows")))?;
            let raw = r.take(nbytes)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
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
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| TensorError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
