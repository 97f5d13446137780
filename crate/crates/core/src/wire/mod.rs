//! Binary wire format: CRC-checked frames, the model payload codec, the
//! protocol messages built on both, and model files.

mod codec;
mod frame;
mod message;

pub use codec::{decode_payload, encode_payload};
pub use frame::{decode_frame, decode_header, encode_frame, Frame, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, TRAILER_LEN, VERSION};
pub use message::{deserialize_model, serialize_model, Message};

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the 64 MiB cap")]
    Oversize(u64),
    #[error("declared length {declared} but {actual} payload bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("crc mismatch: frame says {expected:08x}, payload hashes to {actual:08x}")]
    CrcMismatch { expected: u32, actual: u32 },
    #[error("non-finite parameter in layer {layer}")]
    NonFinite { layer: usize },
    #[error("unexpected {0} message")]
    UnexpectedMessage(&'static str),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

/// Bounds-checked little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if n > self.remaining() {
            return Err(WireError::Truncated { needed: n, available: self.remaining() });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads `count` f64 values after checking they fit in the input.
    pub(crate) fn f64s(&mut self, count: usize) -> Result<alloc::vec::Vec<f64>, WireError> {
        let bytes = count.checked_mul(8).ok_or_else(|| WireError::Malformed("element count overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn finish(&self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::Malformed(alloc::format!("{n} trailing bytes"))),
        }
    }
}
