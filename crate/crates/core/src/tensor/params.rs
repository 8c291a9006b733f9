use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{Result, Tensor, TensorError};

/// Magic line at the start of every checkpoint archive.
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RFCK1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        let zeros = Tensor::zeros(value.shape());
        self.names.push(name);
        self.grads.push(zeros.clone());
        self.first.push(zeros.clone());
        self.second.push(zeros);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn add_random(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut impl Rng) -> ParamId {
        let fan_in = shape.first().copied().unwrap_or(1).max(1) as f64;
        let normal = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.first[id.0], &self.second[id.0])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) -> Result<()> {
        let dst = self.grads[id.0].data_mut();
        if dst.len() != g.len() {
            return Err(TensorError::Shape(format!("gradient of length {} for {}", g.len(), self.names[id.0])));
        }
        for (o, v) in dst.iter_mut().zip(g) {
            *o += v;
        }
        Ok(())
    }

    /// Adds another store's gradient buffers into this one (same layout).
    pub fn add_grads_from(&mut self, other: &ParamStore) -> Result<()> {
        for id in other.ids() {
            let g = other.grads[id.0].data().to_vec();
            self.accumulate_grad(id, &g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// Gradients are left in place; callers zero them.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.adam_step_filtered(cfg, |_| true)
    }

    pub fn adam_step_filtered(&mut self, cfg: &AdamConfig, include: impl Fn(&str) -> bool) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            if !include(&self.names[i]) {
                continue;
            }
            let g = self.grads[i].data();
            let m = self.first[i].data_mut();
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            }
            let v = self.second[i].data_mut();
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            }
            let (m, v) = (self.first[i].data(), self.second[i].data());
            let p = self.values[i].data_mut();
            for j in 0..p.len() {
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// SHA-256 over names, shapes and parameter bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Writes the named-tensor archive: magic, count, then per tensor the
    /// name, rank, dims and little-endian f64 data.
    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, v) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(v.shape().len() as u32).to_le_bytes())?;
            for d in v.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for x in v.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads an archive into a fresh store (no gradients or moments).
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic, expected RFCK1".into()));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u32b).map_err(io)?;
        let count = u32::from_le_bytes(u32b);
        let mut store = ParamStore::new();
        for _ in 0..count {
            r.read_exact(&mut u32b).map_err(io)?;
            let mut name = vec![0u8; u32::from_le_bytes(u32b) as usize];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
            r.read_exact(&mut u32b).map_err(io)?;
            let rank = u32::from_le_bytes(u32b) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut u64b).map_err(io)?;
                shape.push(u64::from_le_bytes(u64b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut u64b).map_err(io)?;
                data.push(f64::from_le_bytes(u64b));
            }
            if store.id(&name).is_some() {
                return Err(TensorError::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    /// Copies values from `other` by name; every parameter here must be present
    /// there with the same shape.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for i in 0..self.values.len() {
            let id = other
                .id(&self.names[i])
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {}", self.names[i])))?;
            let src = other.value(id);
            if src.shape() != self.values[i].shape() {
                return Err(TensorError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    self.names[i],
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}
