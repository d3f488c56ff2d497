//! Binary checkpoints.
//!
//! Layout, all integers `u32` and reals `f64`, little-endian: magic `O2RL`,
//! format version, `d`, layer count, clip, ablation flag bits, tensor count,
//! then per tensor its name length, UTF-8 name, rank, dims and values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ModelParams, NetConfig, PolicyNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"O2RL";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &PolicyNet) -> Vec<u8> {
    let cfg = net.config();
    let params = net.params();
    let mut out = Vec::with_capacity(64 + 8 * params.scalar_count());
    out.extend_from_slice(MAGIC);
    let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    u32le(&mut out, FORMAT_VERSION);
    u32le(&mut out, cfg.d as u32);
    u32le(&mut out, cfg.layers as u32);
    out.extend_from_slice(&cfg.clip.to_le_bytes());
    u32le(&mut out, cfg.flag_bits());
    u32le(&mut out, params.len() as u32);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        u32le(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        u32le(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            u32le(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {} of {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PolicyNet> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut cfg = NetConfig::new(c.u32()? as usize, c.u32()? as usize);
    cfg.clip = c.f64()?;
    cfg.set_flag_bits(c.u32()?);
    let count = c.u32()? as usize;
    let mut names = Vec::with_capacity(count.min(1024));
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()? as usize;
        if rank > 2 {
            return Err(Error::CorruptCheckpoint(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel > (bytes.len() - c.pos) / 8 {
            return Err(Error::CorruptCheckpoint(format!("truncated payload for {name}")));
        }
        let data = (0..numel).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    PolicyNet::new(cfg, ModelParams::from_parts(names, tensors)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("payload does not match its configuration: {e}")))
}

/// Writes to a sibling temporary file first, then renames into place.
pub fn save_checkpoint(net: &PolicyNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(net)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicyNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> PolicyNet {
        let mut cfg = NetConfig::new(8, 2);
        cfg.use_bidirectional = false;
        cfg.clip = 7.5;
        PolicyNet::init(cfg, 42).unwrap()
    }

    #[test]
    fn bitwise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let a = net();
        save_checkpoint(&a, &p).unwrap();
        let b = load_checkpoint(&p).unwrap();
        assert_eq!(a.config(), b.config());
        assert_eq!(a.params().names(), b.params().names());
        for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
            assert_eq!(x.shape(), y.shape());
            assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"O2RL");
    }

    #[test]
    fn truncation_and_version() {
        let bytes = encode_checkpoint(&net());
        for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(Error::CheckpointVersion { found: 2, expected: 1 })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::CorruptCheckpoint(_))));
        let mut flags = bytes;
        flags[24] ^= 1; // drop the GCN flag: the layout no longer matches
        assert!(matches!(decode_checkpoint(&flags), Err(Error::CorruptCheckpoint(_))));
    }
}
