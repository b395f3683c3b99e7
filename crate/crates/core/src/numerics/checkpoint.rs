//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SRTL" | version: u32 | count: u64 |
//!   count × ( name_len: u32 | name: UTF-8 | rank: u32 | dims: rank × u64 | data: f64 × product(dims) )
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRTL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered named tensors as stored on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::usage(format!("duplicate checkpoint entry {name:?}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn extend_from(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        for (name, t) in store.iter() {
            let mut t = t.clone();
            t.zero_grad();
            self.push(format!("{prefix}{name}"), t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u64(r)?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name = read_string(r)?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if n > r.len() / 8 {
                return Err(Error::Format(format!("entry {name:?} truncated")));
            }
            let data = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            ck.push(name, Tensor::new(dims, data)?)?;
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes entries named `{prefix}{name}` back into a store with the same layout.
    pub fn restore_into(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for (name, t) in store.iter_mut() {
            let src = self.get(&format!("{prefix}{name}"))?;
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "entry {name:?} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_string(r: &mut &[u8]) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > r.len() {
        return Err(Error::Format("string length exceeds file".into()));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("invalid UTF-8 in name".into()))
}

pub(crate) fn write_string(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.push("b", Tensor::vector(vec![1.5]).unwrap()).unwrap();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"SRTL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(&bytes[20..21], b"b");
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[25..33].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[33..41].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 41);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(Checkpoint::from_bytes(b"XXXX\x01\0\0\0"), Err(Error::Format(_))));
        let mut ck = Checkpoint::new();
        ck.push("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(entries in proptest::collection::vec(
            ("[a-z]{1,8}", proptest::collection::vec(-1e6f64..1e6, 1..20)), 0..6))
        {
            let mut ck = Checkpoint::new();
            for (name, data) in entries {
                if !ck.entries.contains_key(&name) {
                    ck.push(name, Tensor::vector(data).unwrap()).unwrap();
                }
            }
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }
}
