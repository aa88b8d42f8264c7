//! Fixed-layout big-endian encoding shared by every record that is hashed,
//! signed or sent over the wire.

use crate::crypto::{Digest32, PublicKey, Signature256, DIGEST_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at byte {0}")]
    UnexpectedEnd(usize),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("string is not valid utf-8")]
    InvalidUtf8,
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

#[derive(Default, Debug, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Writer { buf: Vec::with_capacity(cap) }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    pub fn put_bool(&mut self, v: bool) {
        self.put_u8(v as u8);
    }

    pub fn put_raw(&mut self, raw: &[u8]) {
        self.buf.extend_from_slice(raw);
    }

    /// String with a 2-byte length prefix. Panics above 65535 bytes; callers
    /// validate lengths before building records.
    pub fn put_str16(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("string field longer than 65535 bytes");
        self.put_u16(len);
        self.put_raw(s.as_bytes());
    }

    pub fn put_bytes32(&mut self, raw: &[u8]) {
        let len = u32::try_from(raw.len()).expect("byte field longer than u32::MAX");
        self.put_u32(len);
        self.put_raw(raw);
    }

    pub fn put_digest(&mut self, d: &Digest32) {
        self.put_raw(&d.0);
    }

    pub fn put_pk(&mut self, pk: &PublicKey) {
        self.put_raw(&pk.0);
    }

    pub fn put_sig(&mut self, sig: &Signature256) {
        self.put_raw(&sig.0);
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEnd(self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::InvalidTag { what: "bool", tag }),
        }
    }

    pub fn str16(&mut self) -> Result<String, CodecError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::InvalidUtf8)
    }

    pub fn bytes32(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn digest(&mut self) -> Result<Digest32, CodecError> {
        Ok(Digest32(self.array::<DIGEST_LEN>()?))
    }

    pub fn pk(&mut self) -> Result<PublicKey, CodecError> {
        Ok(PublicKey(self.array::<PUBLIC_KEY_LEN>()?))
    }

    pub fn sig(&mut self) -> Result<Signature256, CodecError> {
        Ok(Signature256(self.array::<SIGNATURE_LEN>()?))
    }
}

/// Types with a canonical byte layout.
pub trait Canonical: Sized {
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    /// Decodes and rejects trailing input.
    fn from_bytes(raw: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(raw);
        let v = Self::decode(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub fn encode_seq<T: Canonical>(w: &mut Writer, items: &[T]) {
    w.put_u32(u32::try_from(items.len()).expect("sequence too long"));
    for it in items {
        it.encode(w);
    }
}

pub fn decode_seq<T: Canonical>(r: &mut Reader<'_>) -> Result<Vec<T>, CodecError> {
    let n = r.u32()? as usize;
    // Every element takes at least one byte; bound the allocation by input size.
    if n > r.remaining() {
        return Err(CodecError::UnexpectedEnd(r.position()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(T::decode(r)?);
    }
    Ok(out)
}
