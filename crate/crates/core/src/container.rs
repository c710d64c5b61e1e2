//! Binary model container: a JSON metadata block followed by named typed
//! arrays. Layout, all integers little-endian:
//!
//! ```text
//! magic  b"WCMODEL\0"
//! u32    version (1)
//! u32    kind length, then kind bytes (UTF-8, e.g. "esn")
//! u64    metadata length, then metadata bytes (JSON)
//! u64    section count
//! per section: u32 name length, name bytes, u8 type (0 = f64, 1 = u64), u64 count, payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WCMODEL\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    sections: BTreeMap<String, Section>,
}

impl Container {
    pub fn new(kind: &str, metadata: &impl Serialize) -> Self {
        Self {
            kind: kind.to_string(),
            metadata: serde_json::to_value(metadata).expect("metadata serializes"),
            sections: BTreeMap::new(),
        }
    }

    pub fn metadata_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.metadata.clone())
            .map_err(|e| Error::schema(0, 0, format!("{} container metadata: {e}", self.kind)))
    }

    pub fn put_f64(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.sections.insert(name.into(), Section::F64(data));
    }

    pub fn put_u64(&mut self, name: impl Into<String>, data: Vec<u64>) {
        self.sections.insert(name.into(), Section::U64(data));
    }

    pub fn put_usize(&mut self, name: impl Into<String>, data: &[usize]) {
        self.put_u64(name, data.iter().map(|&v| v as u64).collect());
    }

    pub fn f64(&self, name: &str) -> Result<&[f64]> {
        match self.sections.get(name) {
            Some(Section::F64(v)) => Ok(v),
            _ => Err(Error::schema(0, 0, format!("{} container lacks f64 section '{name}'", self.kind))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<&[u64]> {
        match self.sections.get(name) {
            Some(Section::U64(v)) => Ok(v),
            _ => Err(Error::schema(0, 0, format!("{} container lacks u64 section '{name}'", self.kind))),
        }
    }

    pub fn usize(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.u64(name)?.iter().map(|&v| v as usize).collect())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::schema(0, 0, format!("expected a '{kind}' model, found '{}'", self.kind)))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("json");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.sections.len() as u64).to_le_bytes());
        for (name, sec) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match sec {
                Section::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Section::U64(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::schema(0, 0, "not a model container (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::schema(0, 0, format!("unsupported container version {version}")));
        }
        let klen = r.u32()? as usize;
        let kind = String::from_utf8(r.take(klen)?.to_vec()).map_err(|_| Error::schema(0, 0, "kind is not UTF-8"))?;
        let mlen = r.u64()? as usize;
        let metadata = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| Error::schema(0, 0, format!("container metadata: {e}")))?;
        let count = r.u64()?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::schema(0, 0, "section name is not UTF-8"))?;
            let ty = r.take(1)?[0];
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::schema(0, 0, "section too large"))?)?;
            let sec = match ty {
                0 => Section::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => Section::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                t => return Err(Error::schema(0, 0, format!("unknown section type {t}"))),
            };
            sections.insert(name, sec);
        }
        if r.pos != bytes.len() {
            return Err(Error::schema(0, 0, "trailing bytes after container"));
        }
        Ok(Self {
            kind,
            metadata,
            sections,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::schema(0, 0, "model container truncated")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new("test", &serde_json::json!({"a": 1, "b": [1.5, 2.0]}));
        c.put_f64("x", vec![1.0, f64::NAN, -0.0, 1e-300]);
        c.put_u64("i", vec![0, u64::MAX]);
        let bytes = c.to_bytes();
        let d = Container::from_bytes(&bytes).unwrap();
        assert_eq!(d.kind, "test");
        assert_eq!(d.metadata, c.metadata);
        let x = d.f64("x").unwrap();
        assert_eq!(x[0], 1.0);
        assert!(x[1].is_nan());
        assert_eq!(x[2].to_bits(), (-0.0f64).to_bits());
        assert_eq!(d.u64("i").unwrap(), &[0, u64::MAX]);
        assert_eq!(d.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let c = Container::new("k", &1);
        let b = c.to_bytes();
        assert!(Container::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        assert!(c.f64("missing").is_err());
    }
}
