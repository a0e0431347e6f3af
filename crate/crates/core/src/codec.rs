//! Little-endian binary container shared by dataset and checkpoint files:
//! `magic[4] | version u32 | body length u64 | body | crc32 u32`, with the
//! checksum taken over everything before it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER: usize = 16;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.usize(t.shape().len());
        for &d in t.shape() {
            self.usize(d);
        }
        self.f64s(t.data());
    }

    pub fn seal(self, magic: &[u8; 4], version: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.buf.len() + 4);
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.buf.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.buf);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

pub(crate) struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates the container and returns a reader over its body.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 4],
        version: u32,
        what: &'static str,
    ) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated(what));
        }
        if &bytes[..4] != magic {
            return Err(Error::BadMagic(what));
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if found != version {
            return Err(Error::VersionMismatch {
                what,
                found,
                expected: version,
            });
        }
        if bytes.len() < HEADER {
            return Err(Error::Truncated(what));
        }
        let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let total = (HEADER as u64)
            .checked_add(body_len)
            .and_then(|n| n.checked_add(4));
        match total {
            Some(n) if (bytes.len() as u64) < n => return Err(Error::Truncated(what)),
            Some(n) if bytes.len() as u64 == n => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{what}: trailing bytes after checksum"
                )))
            }
        }
        let end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[end..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..end]);
        if stored != computed {
            return Err(Error::Checksum {
                what,
                stored,
                computed,
            });
        }
        Ok(Self {
            what,
            buf: &bytes[HEADER..end],
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(self.what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// An unbounded size or index.
    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::InvalidArgument(format!("{}: size overflow", self.what)))
    }

    /// A count whose items occupy at least `item_bytes` each, bounded by
    /// the bytes left so corrupt counts cannot trigger huge allocations.
    pub fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(item_bytes as u64) > left {
            return Err(Error::Truncated(self.what));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated(self.what))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::InvalidArgument(format!("{}: invalid utf-8", self.what)))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.count(8)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.usize()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(Error::Truncated(self.what))?;
        let data = self.f64s(numel)?;
        Tensor::new(shape, data)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: unread bytes in body",
                self.what
            )));
        }
        Ok(())
    }
}
