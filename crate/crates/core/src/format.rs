//! Byte-level helpers shared by the binary file formats.
//!
//! Every format starts with an eight-byte ASCII magic, stores integers and
//! IEEE-754 floats little-endian, and rejects truncated or trailing bytes
//! with a diagnostic naming the offset.

use crate::error::{Error, Result};

/// Cursor over a byte buffer with offset-aware errors.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                detail: format!(
                    "truncated input: {what} needs {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    /// Consumes and verifies the eight-byte magic.
    pub fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let offset = self.pos;
        let got = self.take(8, "magic")?;
        if got != magic {
            return Err(Error::Format {
                offset,
                detail: format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn read_f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads `n` f32 values, widened to f64, rejecting non-finite entries.
    pub fn read_f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let offset = self.pos;
        let bytes = self.take(n * 4, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: offset + i * 4,
                    detail: format!("{what}: non-finite value {v}"),
                });
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    /// Errors unless the buffer is fully consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                detail: format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Narrows to f32 for storage; payloads are defined as 32-bit floats.
pub fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn put_f32_slice(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        put_f32(out, v);
    }
}
