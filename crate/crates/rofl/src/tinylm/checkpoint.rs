//! Checkpoint container, binary serialization, digests, and quantization.
//!
//! File layout: magic "ROFLM1\0\0"; seven LE u32 config words (vocab,
//! d_model, n_layers, n_heads, ctx_len, quant_bits, seed); 32-byte
//! lineage id; LE u32 tensor count; per tensor: LE u32 name length, name
//! bytes, LE u32 rank, LE u32 dims, row-major LE f32 data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ROFLM1\0\0";

/// Architecture hyperparameters of a toy decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ctx_len: usize,
    pub seed: u32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::BadConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab == 0 || self.ctx_len == 0 || self.n_layers == 0 {
            return Err(Error::BadConfig(
                "vocab, ctx_len, and n_layers must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// A named weight array: shape plus row-major f32 data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Serialized model state: config, named tensors, quantization marker,
/// and the digest identifying the lineage it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
    pub quant_bits: u32,
    pub lineage_id: [u8; 32],
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    /// True when no tensor holds a NaN or infinity.
    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Canonical byte serialization (identical to the on-disk format).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            self.config.vocab as u32,
            self.config.d_model as u32,
            self.config.n_layers as u32,
            self.config.n_heads as u32,
            self.config.ctx_len as u32,
            self.quant_bits,
            self.config.seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.lineage_id);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.tensor_section_bytes());
        out
    }

    fn tensor_section_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// SHA-256 over the canonical serialization.
    pub fn weights_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        h.finalize().into()
    }

    /// SHA-256 over the tensor section alone; a freshly trained base model
    /// records this as its own lineage id.
    pub fn tensors_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.tensor_section_bytes());
        h.finalize().into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Checkpoint::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Cursor { buf, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(bad("wrong magic bytes"));
        }
        let vocab = r.u32()? as usize;
        let d_model = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        let n_heads = r.u32()? as usize;
        let ctx_len = r.u32()? as usize;
        let quant_bits = r.u32()?;
        let seed = r.u32()?;
        let mut lineage_id = [0u8; 32];
        lineage_id.copy_from_slice(r.take(32)?);
        let count = r.u32()? as usize;
        if count > 1 << 20 {
            return Err(bad("implausible tensor count"));
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            if name_len > 1 << 16 {
                return Err(bad("implausible tensor name length"));
            }
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad("implausible tensor rank"));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                n = n
                    .checked_mul(d)
                    .filter(|&n| n <= 1 << 28)
                    .ok_or_else(|| bad("tensor too large"))?;
                dims.push(d);
            }
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name, Tensor { dims, data }).is_some() {
                return Err(bad("duplicate tensor name"));
            }
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after tensor section"));
        }
        let config = ModelConfig {
            vocab,
            d_model,
            n_layers,
            n_heads,
            ctx_len,
            seed,
        };
        config.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(Checkpoint {
            config,
            tensors,
            quant_bits,
            lineage_id,
        })
    }

    /// Simulated post-training quantization: per-tensor symmetric
    /// quantize-dequantize at the given width, stored back as f32.
    pub fn quantize(&self, bits: u32) -> Result<Checkpoint> {
        if !matches!(bits, 16 | 8 | 4) {
            return Err(Error::BadBits { bits });
        }
        if self.quant_bits != 32 {
            return Err(Error::AlreadyQuantized {
                bits: self.quant_bits,
            });
        }
        let levels = ((1u64 << (bits - 1)) - 1) as f32;
        let mut out = self.clone();
        out.quant_bits = bits;
        for t in out.tensors.values_mut() {
            let max_abs = t.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
            if max_abs == 0.0 {
                continue;
            }
            let scale = max_abs / levels;
            for v in t.data.iter_mut() {
                let q = (*v / scale).round().clamp(-levels - 1.0, levels);
                *v = q * scale;
            }
        }
        Ok(out)
    }
}

fn bad(detail: &str) -> Error {
    Error::Parse {
        what: "checkpoint",
        detail: detail.to_string(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_ckpt() -> Checkpoint {
        let config = ModelConfig {
            vocab: 4,
            d_model: 2,
            n_layers: 1,
            n_heads: 1,
            ctx_len: 8,
            seed: 7,
        };
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "a".to_string(),
            Tensor {
                dims: vec![2, 2],
                data: vec![0.5, -1.25, 3.0, 0.0],
            },
        );
        tensors.insert(
            "b".to_string(),
            Tensor {
                dims: vec![3],
                data: vec![1.0, 2.0, -4.0],
            },
        );
        let mut ck = Checkpoint {
            config,
            tensors,
            quant_bits: 32,
            lineage_id: [0; 32],
        };
        ck.lineage_id = ck.tensors_digest();
        ck
    }

    #[test]
    fn roundtrip_bitwise() {
        let ck = tiny_ckpt();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck, back);
        assert_eq!(ck.weights_digest(), back.weights_digest());
    }

    #[test]
    fn digest_changes_on_bit_flip() {
        let mut ck = tiny_ckpt();
        let before = ck.weights_digest();
        let t = ck.tensors.get_mut("a").unwrap();
        t.data[0] = f32::from_bits(t.data[0].to_bits() ^ 1);
        assert_ne!(before, ck.weights_digest());
    }

    #[test]
    fn base_lineage_is_tensor_digest() {
        let ck = tiny_ckpt();
        assert_eq!(ck.lineage_id, ck.tensors_digest());
    }

    #[test]
    fn quantize_error_bound_and_zero_fixed_point() {
        let ck = tiny_ckpt();
        for bits in [16u32, 8, 4] {
            let q = ck.quantize(bits).unwrap();
            assert_eq!(q.quant_bits, bits);
            assert_eq!(q.lineage_id, ck.lineage_id);
            let levels = ((1u64 << (bits - 1)) - 1) as f32;
            for (name, t) in &ck.tensors {
                let qt = q.tensor(name);
                let max_abs = t.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
                let scale = max_abs / levels;
                for (&w, &qw) in t.data.iter().zip(&qt.data) {
                    assert!((w - qw).abs() <= scale / 2.0 + 1e-7);
                }
            }
        }
        // all-zero tensor is unchanged
        let mut ck2 = tiny_ckpt();
        ck2.tensors
            .insert("z".into(), Tensor::zeros(&[4]));
        let q = ck2.quantize(8).unwrap();
        assert_eq!(q.tensor("z").data, vec![0.0; 4]);
    }

    #[test]
    fn quantize_rejects_bad_widths_and_requantization() {
        let ck = tiny_ckpt();
        assert!(ck.quantize(2).is_err());
        let q = ck.quantize(8).unwrap();
        assert!(matches!(q.quantize(4), Err(Error::AlreadyQuantized { .. })));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"").is_err());
        assert!(Checkpoint::from_bytes(b"ROFLM1\0\0tooshort").is_err());
        let mut bytes = tiny_ckpt().to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes.pop();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
