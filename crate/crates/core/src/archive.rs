//! Flat named-tensor archive.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic      8 bytes   "VLSTMNTA"
//! version    u32       1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes
//!   rank     u32
//!   dims     rank × u64
//!   data     product(dims) × f64
//! ```
//!
//! Entries are written in name order, so identical contents always produce
//! identical bytes, and values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

const MAGIC: &[u8; 8] = b"VLSTMNTA";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Archive(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Archive(format!("invalid UTF-8: {e}")))
    }
}

impl Archive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
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

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let mut archive = Archive::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            archive.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n > buf.len() / 8 {
                return Err(Error::Archive(format!("tensor `{name}` larger than file")));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            archive.tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Archive(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(archive)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
