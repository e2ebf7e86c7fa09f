//! Little-endian binary reading/writing shared by the model file formats.

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} at offset 4 (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated file: need {needed} bytes at offset {offset}, file is {len} bytes")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("invalid value at offset {offset}: {message}")]
    Invalid { offset: usize, message: String },
    #[error("{extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn usize32(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("value fits in u32"));
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pub offset: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, offset: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.offset < n {
            return Err(FormatError::Truncated {
                offset: self.offset,
                needed: n,
                len: self.buf.len(),
            });
        }
        let s = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<(), FormatError> {
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError::Version { found, expected });
        }
        Ok(())
    }


    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn usize32(&mut self) -> Result<usize, FormatError> {
        self.u32().map(|v| v as usize)
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn invalid(&self, message: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset: self.offset,
            message: message.into(),
        }
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.offset != self.buf.len() {
            return Err(FormatError::TrailingBytes {
                offset: self.offset,
                extra: self.buf.len() - self.offset,
            });
        }
        Ok(())
    }
}
