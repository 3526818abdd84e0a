//! Versioned binary container for tensors, integer lists and text.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CYDHCKPT"
//! version    u32
//! count      u32
//! entries    count x { name_len u32, name utf8, kind u8, payload }
//! checksum   u64      FNV-1a of every preceding byte
//! ```
//!
//! Payloads: tensor (`kind 0`) = `rank u32, dims u64 x rank, f64 x prod(dims)`;
//! integers (`kind 1`) = `len u64, u64 x len`; text (`kind 2`) = `len u32, utf8`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CYDHCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Tensor(Tensor),
    Ints(Vec<u64>),
    Text(String),
}

/// Ordered named entries; write order is insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    fn put(&mut self, name: &str, e: Entry) {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| n == name) {
            slot.1 = e;
        } else {
            self.entries.push((name.to_string(), e));
        }
    }

    pub fn put_tensor(&mut self, name: &str, t: Tensor) {
        self.put(name, Entry::Tensor(t));
    }

    pub fn put_ints(&mut self, name: &str, v: Vec<u64>) {
        self.put(name, Entry::Ints(v));
    }

    pub fn put_text(&mut self, name: &str, s: impl Into<String>) {
        self.put(name, Entry::Text(s.into()));
    }

    fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name)? {
            Entry::Tensor(t) => Ok(t),
            _ => Err(Error::Checkpoint(format!("{name:?} is not a tensor"))),
        }
    }

    pub fn ints(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Entry::Ints(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("{name:?} is not an integer list"))),
        }
    }

    pub fn int(&self, name: &str) -> Result<u64> {
        match self.ints(name)? {
            [v] => Ok(*v),
            v => Err(Error::Checkpoint(format!("{name:?}: expected one integer, found {}", v.len()))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Entry::Text(s) => Ok(s),
            _ => Err(Error::Checkpoint(format!("{name:?} is not text"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            match e {
                Entry::Tensor(t) => {
                    b.push(0);
                    b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                    for d in t.shape() {
                        b.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    for v in t.data() {
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Ints(v) => {
                    b.push(1);
                    b.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        b.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Text(s) => {
                    b.push(2);
                    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    b.extend_from_slice(s.as_bytes());
                }
            }
        }
        let sum = fnv1a(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 4 + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut out = Container::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
            let entry = match r.take(1)?[0] {
                0 => {
                    let rank = r.u32()? as usize;
                    let shape = (0..rank)
                        .map(|_| r.u64().map(|d| d as usize))
                        .collect::<Result<Vec<_>>>()?;
                    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    let len = len.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
                    let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Entry::Tensor(Tensor::new(shape, data)?)
                }
                1 => {
                    let len = r.u64()? as usize;
                    if len > r.remaining() / 8 {
                        return Err(Error::Checkpoint(format!("{name}: truncated")));
                    }
                    Entry::Ints((0..len).map(|_| r.u64()).collect::<Result<_>>()?)
                }
                2 => {
                    let len = r.u32()? as usize;
                    let s = String::from_utf8(r.take(len)?.to_vec())
                        .map_err(|_| Error::Checkpoint(format!("{name}: text is not utf-8")))?;
                    Entry::Text(s)
                }
                k => return Err(Error::Checkpoint(format!("{name}: unknown entry kind {k}"))),
            };
            out.entries.push((name, entry));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
