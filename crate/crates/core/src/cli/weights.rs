//! BOLF weights file: named little-endian f32 tensors with a CRC32 trailer.
//!
//! ```text
//! "BOLF" | version u32 | count u32 |
//!   count × ( name_len u32 | name utf-8 | rank u32 | dims u64 × rank | f32 × Π dims ) |
//! crc32 u32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_shapes, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BOLF";
pub const VERSION: u32 = 1;

pub fn encode_weights(params: &ModelParams<f32>, cfg: &ModelConfig) -> Vec<u8> {
    let names = param_shapes(cfg);
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(16 + 4 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for ((name, _), t) in names.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("weights file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Decodes every tensor in file order, verifying magic, version and checksum.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("weights file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a BOLF weights file (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!(
            "weights checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weights version {version} (expected {VERSION})")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("tensor {name} has an overflowing shape {shape:?}")))?;
        let data = r
            .take(n, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", body.len() - r.pos)));
    }
    Ok(out)
}

/// Decodes a weights file for `cfg`; names and shapes must match the model.
pub fn decode_weights(bytes: &[u8], cfg: &ModelConfig) -> Result<ModelParams<f32>> {
    let tensors = decode_tensors(bytes)?;
    let expected = param_shapes(cfg);
    if tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "weights hold {} tensors, the configured model needs {}",
            tensors.len(),
            expected.len()
        )));
    }
    for ((name, t), (want, shape)) in tensors.iter().zip(&expected) {
        if name != want || t.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "weights tensor {name} {:?} does not match model parameter {want} {shape:?}",
                t.shape()
            )));
        }
    }
    ModelParams::from_tensors(cfg, tensors.into_iter().map(|(_, t)| t).collect())
}

pub fn save_weights(path: &Path, params: &ModelParams<f32>, cfg: &ModelConfig) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_weights(params, cfg))?;
    Ok(())
}

pub fn load_weights(path: &Path, cfg: &ModelConfig) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read weights {}: {e}", path.display())))?;
    decode_weights(&bytes, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, InitScheme};

    fn toy() -> ModelConfig {
        ModelConfig {
            height: 8,
            width: 8,
            patch_size: 4,
            dim: 8,
            depth: 1,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let cfg = toy();
        let mut p: ModelParams<f32> = init_params(&cfg, 3, InitScheme::Dense { std: 0.7 });
        p.head_bias.data_mut()[0] = f32::MIN_POSITIVE / 2.0; // subnormal survives
        let bytes = encode_weights(&p, &cfg);
        let back = decode_weights(&bytes, &cfg).unwrap();
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_weights(&back, &cfg), bytes);
    }

    #[test]
    fn layout_matches_the_format() {
        let cfg = toy();
        let p: ModelParams<f32> = init_params(&cfg, 0, InitScheme::Standard);
        let bytes = encode_weights(&p, &cfg);
        assert_eq!(&bytes[..4], b"BOLF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, param_shapes(&cfg).len());
        let name = "patch_embed.weight";
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize, name.len());
        assert_eq!(&bytes[16..16 + name.len()], name.as_bytes());
        let names: usize = param_shapes(&cfg).iter().map(|(n, s)| 4 + n.len() + 4 + 8 * s.len()).sum();
        assert_eq!(bytes.len(), 12 + names + 4 * p.num_scalars() + 4);
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = toy();
        let p: ModelParams<f32> = init_params(&cfg, 0, InitScheme::Standard);
        let bytes = encode_weights(&p, &cfg);
        for i in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(matches!(decode_weights(&bad, &cfg), Err(Error::Format(_))), "flip at {i}");
        }
        assert!(decode_weights(&bytes[..bytes.len() - 9], &cfg).is_err());
        let other = ModelConfig { dim: 16, ..toy() };
        assert!(matches!(decode_weights(&bytes, &other), Err(Error::Format(_))));
    }
}
