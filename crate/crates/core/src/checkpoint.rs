//! Versioned binary checkpoints of a [`MaskedNetwork`].
//!
//! Layout (all integers little-endian), version 1:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TKTCKPT\0"
//! 8       4     version (u32) = 1
//! 12      8     seed (u64)
//! 20      4     round (u32)
//! 24      4     layer count L (u32)
//! 28      9·L   layer table: in_dim u32, out_dim u32, activation u8 (0 relu, 1 softmax)
//! ...           for each layer in order: θ, m, θ₀ as in_dim·out_dim f64 each, row-major
//! ```
//!
//! The file must end exactly after the last tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, MaskedNetwork};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TKTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub round: u32,
    pub network: MaskedNetwork,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let specs = net.layer_specs();
        let mut out = Vec::with_capacity(64 + net.parameter_count() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for s in &specs {
            out.extend_from_slice(&(s.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(s.out_dim as u32).to_le_bytes());
            out.push(match s.activation {
                Activation::Relu => 0,
                Activation::SoftmaxOutput => 1,
            });
        }
        for l in 0..specs.len() {
            for t in [&net.weights()[l], &net.masks()[l], &net.initial_weights()[l]] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let round = r.u32()?;
        let layers = r.u32()? as usize;
        if layers == 0 {
            return Err(Error::Checkpoint("no layers".into()));
        }
        let mut dims = Vec::with_capacity(layers);
        for i in 0..layers {
            let (a, b) = (r.u32()? as usize, r.u32()? as usize);
            let act = r.take(1)?[0];
            let expected = u8::from(i + 1 == layers);
            if act != expected {
                return Err(Error::Checkpoint(format!(
                    "layer {i}: unexpected activation code {act}"
                )));
            }
            if a == 0 || b == 0 {
                return Err(Error::Checkpoint(format!("layer {i}: zero dimension")));
            }
            dims.push((a, b));
        }
        let (mut w, mut m, mut w0) = (Vec::new(), Vec::new(), Vec::new());
        for &(a, b) in &dims {
            w.push(r.tensor(a, b)?);
            m.push(r.tensor(a, b)?);
            w0.push(r.tensor(a, b)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let network = MaskedNetwork::from_parts(w, m, w0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { seed, round, network })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(&[rows, cols], data)
    }
}
