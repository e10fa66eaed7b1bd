//! Canonical byte encoding helpers.
//!
//! Every persistent artifact (secure items, stored objects, data-structure
//! buckets, trie nodes) has exactly one valid byte form: big-endian integers,
//! u32 length prefixes, no padding, no trailing bytes. Decoders reject
//! anything else, which makes decode∘encode the identity on valid inputs and
//! encode∘decode the identity on accepted inputs — the property the fuzz
//! targets and the bit-exactness tests lean on.

use bytes::Bytes;
use thiserror::Error;

use crate::id::{Id, ID_BYTES};

/// Upper bound for any length-prefixed field; guards decoders against
/// allocation bombs on hostile input.
pub const MAX_FIELD: usize = 1 << 24;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum WireError {
    #[error("truncated input")]
    Truncated,
    #[error("field length {0} exceeds limit")]
    TooLong(u64),
    #[error("invalid tag {0}")]
    BadTag(u8),
    #[error("trailing bytes after value")]
    Trailing,
    #[error("non-canonical encoding")]
    NonCanonical,
    #[error("invalid utf-8 in string field")]
    BadUtf8,
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Writer {
        Writer::default()
    }

    pub fn with_capacity(n: usize) -> Writer {
        Writer { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn id(&mut self, v: &Id) -> &mut Self {
        self.buf.extend_from_slice(&v.0);
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        debug_assert!(v.len() <= MAX_FIELD);
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    /// Length-prefixed UTF-8 string.
    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    /// Raw bytes with no length prefix (fixed-width fields).
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.buf
    }

    pub fn into_bytes(self) -> Bytes {
        Bytes::from(self.buf)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::NonCanonical),
        }
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn id(&mut self) -> Result<Id, WireError> {
        let s = self.take(ID_BYTES)?;
        Ok(Id::from_bytes(s).unwrap())
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        if n > MAX_FIELD {
            return Err(WireError::TooLong(n as u64));
        }
        self.take(n)
    }

    pub fn bytes_owned(&mut self) -> Result<Bytes, WireError> {
        Ok(Bytes::copy_from_slice(self.bytes()?))
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| WireError::BadUtf8)
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    /// Asserts the input is fully consumed.
    pub fn finish(self) -> Result<(), WireError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(WireError::Trailing)
        }
    }
}

/// Reads a `u32` element count and checks it against what the remaining
/// input could possibly hold (each element needs at least `min_elem_size`
/// bytes); prevents pre-allocation bombs.
pub fn read_count(r: &mut Reader<'_>, min_elem_size: usize) -> Result<usize, WireError> {
    let n = r.u32()? as usize;
    if n > MAX_FIELD || n.saturating_mul(min_elem_size.max(1)) > r.remaining() {
        return Err(WireError::TooLong(n as u64));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        let mut w = Writer::new();
        w.u8(7).u16(300).u32(70_000).u64(1 << 40).bool(true).str("héllo").bytes(b"xyz");
        let v = w.into_vec();
        let mut r = Reader::new(&v);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u16().unwrap(), 300);
        assert_eq!(r.u32().unwrap(), 70_000);
        assert_eq!(r.u64().unwrap(), 1 << 40);
        assert!(r.bool().unwrap());
        assert_eq!(r.str().unwrap(), "héllo");
        assert_eq!(r.bytes().unwrap(), b"xyz");
        r.finish().unwrap();
    }

    #[test]
    fn rejects_truncation_trailing_and_noncanonical_bool() {
        let mut r = Reader::new(&[0, 0, 0, 9, 1, 2]);
        assert_eq!(r.bytes().unwrap_err(), WireError::Truncated);

        let r = Reader::new(&[1, 2]);
        assert_eq!(r.finish().unwrap_err(), WireError::Trailing);

        let mut r = Reader::new(&[2]);
        assert_eq!(r.bool().unwrap_err(), WireError::NonCanonical);
    }

    #[test]
    fn count_guard_rejects_allocation_bombs() {
        // Claims 2^24-1 elements of ≥8 bytes with almost no input behind it.
        let mut w = Writer::new();
        w.u32(0x00ff_ffff);
        let v = w.into_vec();
        let mut r = Reader::new(&v);
        assert!(matches!(read_count(&mut r, 8), Err(WireError::TooLong(_))));
    }
}
