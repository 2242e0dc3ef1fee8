//! Canonical binary encoding shared by blocks, transactions, certificates and
//! bus frames.
//!
//! Every hash and signature in the system is computed over bytes produced
//! here, so the layout is fixed:
//!
//! ```text
//! integers   big-endian, fixed width (u8, u32, u64, i64)
//! string     u32 byte length ‖ UTF-8 bytes
//! bytes      u32 byte length ‖ raw bytes
//! list       u32 element count ‖ elements
//! option     u8 0 (absent) | u8 1 ‖ value
//! fixed      raw bytes, no prefix (digests, keys, signatures, nonces)
//! ```
//!
//! Decoding is strict: truncated input, invalid UTF-8, unknown tags and
//! trailing bytes are all errors, so two distinct byte strings never decode
//! to the same value.

use thiserror::Error;

/// Largest length prefix accepted by the decoder. Guards allocation when a
/// corrupted prefix claims a huge payload.
pub const MAX_PREFIXED_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input: needed {needed} bytes at offset {offset}")]
    UnexpectedEof { offset: usize, needed: usize },
    #[error("invalid UTF-8 in string at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid {what} tag {tag}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("length prefix {len} exceeds limit")]
    LengthTooLarge { len: usize },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Append-only canonical writer.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
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

    pub fn put_u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn put_bool(&mut self, v: bool) -> &mut Self {
        self.put_u8(u8::from(v))
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_fixed(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.put_len(bytes.len());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn put_str(&mut self, s: &str) -> &mut Self {
        self.put_bytes(s.as_bytes())
    }

    pub fn put_len(&mut self, len: usize) -> &mut Self {
        let len = u32::try_from(len).expect("canonical length exceeds u32");
        self.put_u32(len)
    }

    pub fn put<T: Canonical>(&mut self, value: &T) -> &mut Self {
        value.encode(self);
        self
    }

    pub fn put_list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.put_len(items.len());
        for item in items {
            item.encode(self);
        }
        self
    }

    pub fn put_option<T: Canonical>(&mut self, value: Option<&T>) -> &mut Self {
        match value {
            None => self.put_u8(0),
            Some(v) => {
                self.put_u8(1);
                v.encode(self);
                self
            }
        }
    }
}

/// Cursor over canonical bytes.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEof {
                offset: self.pos,
                needed: n,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn take_array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::InvalidTag { what: "bool", tag }),
        }
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take_array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take_array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.take_array()?))
    }

    pub fn length_prefix(&mut self) -> Result<usize, DecodeError> {
        let len = self.u32()? as usize;
        if len > MAX_PREFIXED_LEN {
            return Err(DecodeError::LengthTooLarge { len });
        }
        Ok(len)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.length_prefix()?;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let offset = self.pos;
        let raw = self.bytes()?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::InvalidUtf8 { offset })
    }

    pub fn get<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode(self)
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let count = self.length_prefix()?;
        // Each element occupies at least one byte; cap the reservation so a
        // corrupt count cannot trigger a huge allocation.
        let mut out = Vec::with_capacity(count.min(self.remaining()));
        for _ in 0..count {
            out.push(T::decode(self)?);
        }
        Ok(out)
    }

    pub fn option<T: Canonical>(&mut self) -> Result<Option<T>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(self)?)),
            tag => Err(DecodeError::InvalidTag {
                what: "option",
                tag,
            }),
        }
    }
}

/// A type with a single, fixed byte representation.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder);

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    /// Decodes a complete value; trailing bytes are rejected.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

impl Canonical for String {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(self);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.string()
    }
}

impl Canonical for u64 {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(*self);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.u64()
    }
}

impl Canonical for u32 {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(*self);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.u32()
    }
}

impl Canonical for Vec<u8> {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_bytes(self);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.bytes().map(<[u8]>::to_vec)
    }
}

/// Wraps `len ‖ bytes` framing around a sequence of encoded items. Used for
/// ledger dump files.
pub fn write_length_prefixed(out: &mut Vec<u8>, item: &[u8]) {
    let len = u32::try_from(item.len()).expect("frame exceeds u32");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(item);
}

/// Splits `len ‖ bytes` framed items back apart.
pub fn read_length_prefixed(bytes: &[u8]) -> Result<Vec<&[u8]>, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let mut out = Vec::new();
    while dec.remaining() > 0 {
        out.push(dec.bytes()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integers_are_big_endian() {
        let mut enc = Encoder::new();
        enc.put_u32(1).put_u64(2).put_i64(-1);
        let bytes = enc.into_bytes();
        assert_eq!(&bytes[..4], &[0, 0, 0, 1]);
        assert_eq!(&bytes[4..12], &[0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(&bytes[12..], &[0xff; 8]);
    }

    #[test]
    fn string_is_length_prefixed_utf8() {
        let bytes = "fibchannel".to_string().to_canonical_bytes();
        assert_eq!(&bytes[..4], &[0, 0, 0, 10]);
        assert_eq!(&bytes[4..], b"fibchannel");
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = "abc".to_string().to_canonical_bytes();
        let err = String::from_canonical_bytes(&bytes[..5]).unwrap_err();
        assert!(matches!(err, DecodeError::UnexpectedEof { .. }));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = 7u64.to_canonical_bytes();
        bytes.push(0);
        assert_eq!(
            u64::from_canonical_bytes(&bytes),
            Err(DecodeError::TrailingBytes(1))
        );
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let bytes = [0, 0, 0, 2, 0xc3, 0x28];
        assert!(matches!(
            String::from_canonical_bytes(&bytes),
            Err(DecodeError::InvalidUtf8 { .. })
        ));
    }

    #[test]
    fn huge_length_prefix_is_rejected_without_allocating() {
        let bytes = [0xff, 0xff, 0xff, 0xff];
        assert!(matches!(
            Vec::<u8>::from_canonical_bytes(&bytes),
            Err(DecodeError::LengthTooLarge { .. })
        ));
        let mut dec = Decoder::new(&[0x00, 0x10, 0x00, 0x00]);
        assert!(dec.list::<u64>().is_err());
    }

    #[test]
    fn option_tag_must_be_zero_or_one() {
        let mut dec = Decoder::new(&[2]);
        assert!(matches!(
            dec.option::<u64>(),
            Err(DecodeError::InvalidTag { what: "option", .. })
        ));
    }

    proptest! {
        #[test]
        fn strings_and_lists_round_trip(items in proptest::collection::vec(".{0,12}", 0..8)) {
            let mut enc = Encoder::new();
            enc.put_list(&items);
            let bytes = enc.into_bytes();
            let mut dec = Decoder::new(&bytes);
            prop_assert_eq!(dec.list::<String>().unwrap(), items);
            prop_assert!(dec.finish().is_ok());
        }

        #[test]
        fn length_prefixed_frames_round_trip(frames in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 0..6)) {
            let mut out = Vec::new();
            for f in &frames {
                write_length_prefixed(&mut out, f);
            }
            let back: Vec<Vec<u8>> = read_length_prefixed(&out).unwrap().into_iter().map(<[u8]>::to_vec).collect();
            prop_assert_eq!(back, frames);
        }
    }
}
