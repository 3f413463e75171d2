//! Checkpoint container: `LDRF-CK1` magic, u64 LE header length, a JSON
//! header naming every block, then the blocks as little-endian f32 in header
//! order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LDRF-CK1";
pub const CHECKPOINT_FORMAT: &str = "ldrf-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    step: u64,
    config_hash: String,
    blocks: Vec<BlockMeta>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config_hash: String,
    pub blocks: Vec<(BlockMeta, Vec<f32>)>,
    /// Free-form state (schedules, rng) serialized into the header.
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&[f32]> {
        self.blocks.iter().find(|(m, _)| m.name == name).map(|(_, v)| v.as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            step: self.step,
            config_hash: self.config_hash.clone(),
            blocks: self.blocks.iter().map(|(m, _)| m.clone()).collect(),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let total: usize = self.blocks.iter().map(|(_, v)| v.len() * 4).sum();
        let mut buf = Vec::with_capacity(16 + json.len() + total);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (meta, data) in &self.blocks {
            let n: usize = meta.shape.iter().product();
            if n != data.len() {
                return Err(Error::Shape(format!("checkpoint block {} has {} values for shape {:?}", meta.name, data.len(), meta.shape)));
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "missing LDRF-CK1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, format!("unsupported checkpoint format {}", header.format)));
        }
        let mut off = 16 + hlen;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for meta in header.blocks {
            let n: usize = meta.shape.iter().product();
            let raw = bytes
                .get(off..off + 4 * n)
                .ok_or_else(|| Error::format(path, format!("truncated block {}", meta.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            off += 4 * n;
            blocks.push((meta, data));
        }
        if off != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last block"));
        }
        Ok(Self {
            step: header.step,
            config_hash: header.config_hash,
            blocks,
            extra: header.extra,
        })
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let ck = Checkpoint {
            step: 42,
            config_hash: config_hash(&"cfg").unwrap(),
            blocks: vec![
                (BlockMeta { name: "a".into(), shape: vec![2, 2] }, vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]),
                (BlockMeta { name: "b".into(), shape: vec![1] }, vec![7.25]),
            ],
            extra: serde_json::json!({"eps_t": 10.0}),
        };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.extra, ck.extra);
        for ((ma, a), (mb, b)) in ck.blocks.iter().zip(&back.blocks) {
            assert_eq!(ma, mb);
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTACHECKPOINT__").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
