//! Binary checkpoint format.
//!
//! ```text
//! b"DBA1"  u32 count
//! per tensor: u16 name_len, name (UTF-8), u8 rank, rank × u32 extent, f64 payload
//! ```
//!
//! All integers and floats are little-endian. Reading parses the whole file
//! before returning anything, so a damaged file never yields a partial set.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{DbaError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DBA1";

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    let mut seen = BTreeSet::new();
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(DbaError::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        let bytes = name.as_bytes();
        out.extend_from_slice(&u16::try_from(bytes.len()).map_err(|_| too_big("name"))?.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(u8::try_from(t.shape().len()).map_err(|_| too_big("rank"))?);
        for &e in t.shape() {
            out.extend_from_slice(&u32::try_from(e).map_err(|_| too_big("extent"))?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_big(what: &str) -> DbaError {
    DbaError::Checkpoint(format!("{what} does not fit the checkpoint header"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            DbaError::Checkpoint(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(DbaError::Checkpoint("bad magic, not a DBA1 checkpoint".into()));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| DbaError::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| DbaError::Checkpoint(format!("{name}: extents overflow")))?;
        let payload = r.take(numel.checked_mul(8).ok_or_else(|| too_big("payload"))?, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| DbaError::Checkpoint(format!("{name}: {e}")))?;
        if out.iter().any(|(n, _): &(String, Tensor)| *n == name) {
            return Err(DbaError::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(DbaError::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            buf.len() - r.pos
        )));
    }
    Ok(out)
}

/// Writes to a sibling temp file and renames it into place.
pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path)
        .map_err(|e| DbaError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("block0.attn.z".into(), Tensor::from_fn(2, 3, |i, j| i as f64 - 0.5 * j as f64)),
            ("head.b".into(), Tensor::new(vec![4], vec![1.0, -2.0, 1e-300, f64::MAX]).unwrap()),
        ]
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let t = sample();
        assert_eq!(decode(&encode(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[("ab".into(), Tensor::scalar(1.5))]).unwrap();
        let mut expect = b"DBA1".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u16.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.push(2);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode(&sample()).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(decode(&bytes[..cut]), Err(DbaError::Checkpoint(_))), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::scalar(0.0);
        assert!(encode(&[("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dba");
        save(&path, &sample()).unwrap();
        assert_eq!(load(&path).unwrap(), sample());
        assert!(load(&dir.path().join("missing")).is_err());
    }
}
