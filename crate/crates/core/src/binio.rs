//! Little-endian framing shared by the binary formats: a 4-byte magic, a
//! `u32` version, then format-specific fields.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BinError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid data at byte {offset}: {message}")]
    Invalid { offset: usize, message: String },
    #[error("{trailing} trailing bytes after offset {offset}")]
    Trailing { offset: usize, trailing: usize },
}

#[derive(Default)]
pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn with_header(magic: &[u8; 4], version: u32) -> Self {
        let mut enc = Self::default();
        enc.buf.extend_from_slice(magic);
        enc.u32(version);
        enc
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.f32(*v);
        }
    }

    pub fn u32s(&mut self, vs: &[u32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.u32(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, offset: 0 }
    }

    /// Checks magic and version; returns the decoder positioned after them.
    pub fn with_header(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self, BinError> {
        let mut dec = Self::new(bytes);
        let found = dec.take(4)?;
        if found != magic {
            return Err(BinError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let found = dec.u32()?;
        if found != version {
            return Err(BinError::UnsupportedVersion {
                found,
                supported: version,
            });
        }
        Ok(dec)
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        let remaining = self.bytes.len() - self.offset;
        if n > remaining {
            return Err(BinError::Truncated {
                offset: self.offset,
                needed: n - remaining,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, BinError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, BinError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>, BinError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn invalid(&self, message: impl Into<String>) -> BinError {
        BinError::Invalid {
            offset: self.offset,
            message: message.into(),
        }
    }

    pub fn finish(self) -> Result<(), BinError> {
        let trailing = self.bytes.len() - self.offset;
        if trailing > 0 {
            return Err(BinError::Trailing {
                offset: self.offset,
                trailing,
            });
        }
        Ok(())
    }
}
