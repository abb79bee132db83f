//! Deterministic length-prefixed binary encoding shared by every wire type.
//!
//! Integers are big-endian and fixed width. Variable-length fields carry a
//! 4-byte big-endian length prefix. Top-level values start with a 1-byte type
//! tag. Decoding is strict: there is exactly one accepted encoding per value,
//! so `encode(decode(bytes)) == bytes` whenever decoding succeeds.

use thiserror::Error;

/// Upper bound on any single length-prefixed field. Anything larger is
/// treated as malformed rather than allocated.
pub const MAX_FIELD_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at offset {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeErrorKind {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("unknown type tag {0:#04x}")]
    BadTag(u8),
    #[error("field length {0} exceeds limit")]
    LengthOverflow(usize),
    #[error("invalid UTF-8")]
    BadUtf8,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
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

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Raw bytes with no length prefix (fixed-size fields).
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// Bytes with a 4-byte big-endian length prefix.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(u32::try_from(v.len()).expect("field exceeds u32 length"));
        self.raw(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    /// Length-prefixed list; `f` writes each element.
    pub fn list<T>(&mut self, items: &[T], mut f: impl FnMut(&mut Self, &T)) -> &mut Self {
        self.u32(u32::try_from(items.len()).expect("list exceeds u32 length"));
        for item in items {
            f(self, item);
        }
        self
    }

    pub fn optional<T>(&mut self, v: Option<&T>, f: impl FnOnce(&mut Self, &T)) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                f(self, v);
                self
            }
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset: self.pos, kind }
    }

    pub fn err_at(&self, offset: usize, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset, kind }
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(self.err(DecodeErrorKind::UnexpectedEof));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.raw(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.raw(1)?[0])
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

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(self.err_at(at, DecodeErrorKind::Invalid("boolean"))),
        }
    }

    /// Reads the tag byte and checks it.
    pub fn tag(&mut self, expected: u8) -> Result<(), DecodeError> {
        let at = self.pos;
        let tag = self.u8()?;
        if tag != expected {
            return Err(self.err_at(at, DecodeErrorKind::BadTag(tag)));
        }
        Ok(())
    }

    fn length(&mut self) -> Result<usize, DecodeError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN {
            return Err(self.err_at(at, DecodeErrorKind::LengthOverflow(len)));
        }
        if len > self.remaining() {
            return Err(self.err_at(at, DecodeErrorKind::UnexpectedEof));
        }
        Ok(len)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.length()?;
        self.raw(len)
    }

    pub fn bytes_vec(&mut self) -> Result<Vec<u8>, DecodeError> {
        self.bytes().map(<[u8]>::to_vec)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        let raw = self.bytes()?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| self.err_at(at, DecodeErrorKind::BadUtf8))
    }

    /// Reads a length-prefixed list. The count is bounded by the remaining
    /// input so a hostile count cannot force a huge allocation.
    pub fn list<T>(&mut self, mut f: impl FnMut(&mut Self) -> Result<T, DecodeError>) -> Result<Vec<T>, DecodeError> {
        let at = self.pos;
        let count = self.u32()? as usize;
        if count > self.remaining() {
            return Err(self.err_at(at, DecodeErrorKind::LengthOverflow(count)));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(f(self)?);
        }
        Ok(out)
    }

    pub fn optional<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, DecodeError>,
    ) -> Result<Option<T>, DecodeError> {
        if self.bool()? {
            f(self).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Fails unless the whole input has been consumed.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            return Err(self.err(DecodeErrorKind::TrailingBytes(self.remaining())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_are_big_endian_u32() {
        let mut w = Writer::new();
        w.u8(0x42).bytes(b"abc");
        assert_eq!(w.finish(), vec![0x42, 0, 0, 0, 3, b'a', b'b', b'c']);
    }

    #[test]
    fn truncated_length_reports_offset() {
        let mut r = Reader::new(&[0, 0, 0, 9, 1]);
        let err = r.bytes().unwrap_err();
        assert_eq!(err.offset, 0);
        assert_eq!(err.kind, DecodeErrorKind::UnexpectedEof);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut r = Reader::new(&[1, 2]);
        r.u8().unwrap();
        assert_eq!(
            r.finish().unwrap_err(),
            DecodeError {
                offset: 1,
                kind: DecodeErrorKind::TrailingBytes(1)
            }
        );
    }

    #[test]
    fn hostile_list_count_is_rejected_without_allocating() {
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff]);
        assert!(matches!(
            r.list(|r| r.u8()).unwrap_err().kind,
            DecodeErrorKind::LengthOverflow(_)
        ));
    }

    #[test]
    fn non_canonical_bool_rejected() {
        assert!(Reader::new(&[2]).bool().is_err());
    }
}
