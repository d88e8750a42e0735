//! Flat named-array container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic    4 bytes  "GCPK"
//! version  u16      1
//! kind     u8       caller-defined tag (1 = weights, 2 = prepared dataset)
//! reserved u8       0
//! hash     32 bytes configuration digest
//! count    u32      number of entries
//! entry*   name_len u16, name (UTF-8),
//!          tag u8 (0 = f64, 1 = i64, 2 = text), ndim u8, dims u64 × ndim,
//!          payload: row-major f64 / i64 values, or for text `dims[0]`
//!          strings each encoded as u32 length + UTF-8 bytes
//! ```
//!
//! Entries keep insertion order, so writing the same container twice yields
//! identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"GCPK";
pub const VERSION: u16 = 1;

pub const KIND_WEIGHTS: u8 = 1;
pub const KIND_DATASET: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F64(Array),
    I64 { shape: Vec<usize>, data: Vec<i64> },
    Text(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: u8,
    pub hash: [u8; 32],
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new(kind: u8, hash: [u8; 32]) -> Self {
        Self {
            kind,
            hash,
            entries: Vec::new(),
        }
    }

    pub fn from_params(kind: u8, hash: [u8; 32], params: &ParamSet) -> Self {
        let mut c = Self::new(kind, hash);
        for (name, a) in params.iter() {
            c.push(name, Entry::F64(a.clone()));
        }
        c
    }

    /// All f64 entries in order, as a parameter set.
    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, e) in &self.entries {
            if let Entry::F64(a) = e {
                p.insert(name.clone(), a.clone());
            }
        }
        p
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn f64(&self, name: &str) -> Result<&Array> {
        match self.get(name) {
            Some(Entry::F64(a)) => Ok(a),
            _ => Err(missing(name, "f64")),
        }
    }

    pub fn i64(&self, name: &str) -> Result<(&[usize], &[i64])> {
        match self.get(name) {
            Some(Entry::I64 { shape, data }) => Ok((shape, data)),
            _ => Err(missing(name, "i64")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[String]> {
        match self.get(name) {
            Some(Entry::Text(t)) => Ok(t),
            _ => Err(missing(name, "text")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind);
        out.push(0);
        out.extend_from_slice(&self.hash);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (tag, shape): (u8, Vec<usize>) = match entry {
                Entry::F64(a) => (0, a.shape().to_vec()),
                Entry::I64 { shape, .. } => (1, shape.clone()),
                Entry::Text(t) => (2, vec![t.len()]),
            };
            out.push(tag);
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match entry {
                Entry::F64(a) => a
                    .data()
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::I64 { data, .. } => data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Entry::Text(t) => {
                    for s in t {
                        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                        out.extend_from_slice(s.as_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        r.u8()?;
        let hash: [u8; 32] = r.array()?;
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut c = Container::new(kind, hash);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let tag = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = shape.iter().product();
            let entry = match tag {
                0 => {
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push(f64::from_le_bytes(r.array()?));
                    }
                    Entry::F64(Array::new(shape, data)?)
                }
                1 => {
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push(i64::from_le_bytes(r.array()?));
                    }
                    Entry::I64 { shape, data }
                }
                2 => {
                    let mut t = Vec::with_capacity(n);
                    for _ in 0..n {
                        let len = u32::from_le_bytes(r.array()?) as usize;
                        t.push(
                            String::from_utf8(r.take(len)?.to_vec())
                                .map_err(|_| Error::Format("text entry is not UTF-8".into()))?,
                        );
                    }
                    Entry::Text(t)
                }
                other => return Err(Error::Format(format!("unknown entry tag {other}"))),
            };
            c.push(name, entry);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(c)
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

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn missing(name: &str, kind: &str) -> Error {
    Error::Format(format!("missing {kind} entry `{name}`"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}
