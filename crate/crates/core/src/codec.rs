//! Big-endian byte codec shared by every on-disk and on-wire format.

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl DecodeError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        DecodeError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Append-only encoder.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    /// u8 length prefix.
    pub fn short_str(&mut self, s: &str) -> &mut Self {
        assert!(s.len() <= u8::MAX as usize, "short string too long");
        self.u8(s.len() as u8).bytes(s.as_bytes())
    }

    /// u32 length prefix.
    pub fn blob(&mut self, b: &[u8]) -> &mut Self {
        let len = u32::try_from(b.len()).expect("blob exceeds u32 length");
        self.u32(len).bytes(b)
    }

    /// Minimal unsigned big-endian magnitude, u32 length prefix. Zero encodes as one 0x00 byte.
    pub fn biguint(&mut self, v: &BigUint) -> &mut Self {
        self.blob(&v.to_bytes_be())
    }

    /// Big-endian magnitude left-padded to exactly `width` bytes, no prefix.
    pub fn biguint_fixed(&mut self, v: &BigUint, width: usize) -> &mut Self {
        let raw = v.to_bytes_be();
        assert!(raw.len() <= width, "integer wider than fixed width");
        self.buf.extend(std::iter::repeat_n(0u8, width - raw.len()));
        self.bytes(&raw)
    }
}

/// Cursor-based decoder over a borrowed buffer.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), DecodeError> {
        if &self.array::<4>()? != expected {
            return Err(DecodeError::BadMagic {
                expected: *expected,
            });
        }
        Ok(())
    }

    pub fn version(&mut self, supported: u16) -> Result<u16, DecodeError> {
        let v = self.u16()?;
        if v != supported {
            return Err(DecodeError::UnsupportedVersion(v));
        }
        Ok(v)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bool(&mut self, field: &'static str) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(DecodeError::invalid(field, format!("boolean byte {other}"))),
        }
    }

    pub fn short_str(&mut self, field: &'static str) -> Result<String, DecodeError> {
        let len = self.u8()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::invalid(field, "not utf-8"))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    /// Accepts only the canonical minimal encoding written by [`Writer::biguint`].
    pub fn biguint(&mut self, field: &'static str) -> Result<BigUint, DecodeError> {
        let raw = self.blob()?;
        if raw.is_empty() || (raw.len() > 1 && raw[0] == 0) {
            return Err(DecodeError::invalid(field, "non-canonical integer encoding"));
        }
        Ok(BigUint::from_bytes_be(raw))
    }

    /// Reads exactly `width` big-endian bytes.
    pub fn biguint_fixed(&mut self, width: usize) -> Result<BigUint, DecodeError> {
        let raw = self.take(width)?;
        Ok(BigUint::from_bytes_be(raw))
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}
