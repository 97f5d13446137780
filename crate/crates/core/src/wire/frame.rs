use alloc::vec::Vec;

use super::{Reader, WireError};

pub const MAGIC: [u8; 4] = *b"FTL1";
pub const VERSION: u8 = 1;
/// Magic, version, type and length.
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    GlobalModel = 0x02,
    UpdateSubmit = 0x03,
    RoundAck = 0x04,
    ClientError = 0x05,
    Shutdown = 0x06,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => MsgType::Hello,
            0x02 => MsgType::GlobalModel,
            0x03 => MsgType::UpdateSubmit,
            0x04 => MsgType::RoundAck,
            0x05 => MsgType::ClientError,
            0x06 => MsgType::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let len = frame.payload.len();
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len as u64));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.extend_from_slice(&frame.payload);
    out.extend_from_slice(&crc32fast::hash(&frame.payload).to_le_bytes());
    Ok(out)
}

/// Validates a frame header and returns the message type and payload length.
pub fn decode_header(header: &[u8]) -> Result<(MsgType, usize), WireError> {
    let mut r = Reader::new(header);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    let raw_type = r.u8()?;
    let msg_type = MsgType::from_u8(raw_type).ok_or(WireError::UnknownType(raw_type))?;
    let len = r.u32()? as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len as u64));
    }
    Ok((msg_type, len))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let (msg_type, len) = decode_header(&bytes[..HEADER_LEN])?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < TRAILER_LEN {
        return Err(WireError::Truncated { needed: len + TRAILER_LEN, available: body.len() });
    }
    let actual = body.len() - TRAILER_LEN;
    if actual != len {
        return Err(WireError::LengthMismatch { declared: len, actual });
    }
    let payload = &body[..len];
    let expected = u32::from_le_bytes(body[len..].try_into().expect("4 bytes"));
    let hashed = crc32fast::hash(payload);
    if expected != hashed {
        return Err(WireError::CrcMismatch { expected, actual: hashed });
    }
    Ok(Frame { msg_type, payload: payload.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_hello_bytes() {
        let bytes = encode_frame(&Frame { msg_type: MsgType::Hello, payload: vec![] }).unwrap();
        assert_eq!(bytes, [0x46, 0x54, 0x4C, 0x31, 0x01, 0x01, 0, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn crc_is_the_reflected_ieee_polynomial() {
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut bytes = encode_frame(&Frame { msg_type: MsgType::RoundAck, payload: vec![1, 2, 3, 4] }).unwrap();
        bytes[HEADER_LEN + 2] ^= 0x10;
        assert!(matches!(decode_frame(&bytes), Err(WireError::CrcMismatch { .. })));
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode_frame(&Frame { msg_type: MsgType::Shutdown, payload: vec![9] }).unwrap();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(decode_frame(&b), Err(WireError::BadMagic(_))));
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(decode_frame(&b), Err(WireError::BadVersion(2)));
        let mut b = good.clone();
        b[5] = 0x7f;
        assert_eq!(decode_frame(&b), Err(WireError::UnknownType(0x7f)));
        let mut b = good.clone();
        b[6] = 2;
        assert_eq!(decode_frame(&b), Err(WireError::LengthMismatch { declared: 2, actual: 1 }));
        let mut b = good.clone();
        b[9] = 0xff;
        assert!(matches!(decode_frame(&b), Err(WireError::Oversize(_))));
        assert!(matches!(decode_frame(&good[..7]), Err(WireError::Truncated { .. })));
        assert_eq!(decode_frame(&good).unwrap().payload, vec![9]);
    }
}
