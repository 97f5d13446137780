use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::codec::{encode_payload, read_payload};
use super::frame::{decode_frame, encode_frame, Frame, MsgType};
use super::{Reader, WireError};
use crate::federation::ModelPayload;
use crate::linalg::Matrix;
use crate::model::MlpModel;

/// Protocol messages. The server opens every round with `GlobalModel`;
/// clients answer with `UpdateSubmit` or `ClientError`.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Registration. Clients send their id; the server answers with the
    /// reference sample used for relevance scoring, if any.
    Hello { client_id: String, reference: Option<Matrix> },
    GlobalModel { round: u32, payload: ModelPayload },
    UpdateSubmit { round: u32, local_loss: f64, payload: ModelPayload },
    RoundAck { round: u32 },
    ClientError { round: u32, message: String },
    /// End of federation, optionally with the final global layers.
    Shutdown { payload: Option<ModelPayload> },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::GlobalModel { .. } => MsgType::GlobalModel,
            Message::UpdateSubmit { .. } => MsgType::UpdateSubmit,
            Message::RoundAck { .. } => MsgType::RoundAck,
            Message::ClientError { .. } => MsgType::ClientError,
            Message::Shutdown { .. } => MsgType::Shutdown,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::GlobalModel { .. } => "GlobalModel",
            Message::UpdateSubmit { .. } => "UpdateSubmit",
            Message::RoundAck { .. } => "RoundAck",
            Message::ClientError { .. } => "ClientError",
            Message::Shutdown { .. } => "Shutdown",
        }
    }

    pub fn to_frame(&self) -> Result<Frame, WireError> {
        let mut out = Vec::new();
        match self {
            Message::Hello { client_id, reference } => {
                if !client_id.is_empty() || reference.is_some() {
                    put_str(&mut out, client_id)?;
                    match reference {
                        None => out.push(0),
                        Some(m) => {
                            out.push(1);
                            put_len(&mut out, m.rows())?;
                            put_len(&mut out, m.cols())?;
                            if !m.is_finite() {
                                return Err(WireError::Malformed("reference sample is not finite".into()));
                            }
                            for v in m.data() {
                                out.extend_from_slice(&v.to_le_bytes());
                            }
                        }
                    }
                }
            }
            Message::GlobalModel { round, payload } => {
                out.extend_from_slice(&round.to_le_bytes());
                out.extend_from_slice(&encode_payload(payload)?);
            }
            Message::UpdateSubmit { round, local_loss, payload } => {
                out.extend_from_slice(&round.to_le_bytes());
                out.extend_from_slice(&local_loss.to_le_bytes());
                out.extend_from_slice(&encode_payload(payload)?);
            }
            Message::RoundAck { round } => out.extend_from_slice(&round.to_le_bytes()),
            Message::ClientError { round, message } => {
                out.extend_from_slice(&round.to_le_bytes());
                put_str(&mut out, message)?;
            }
            Message::Shutdown { payload } => {
                if let Some(p) = payload {
                    out.extend_from_slice(&encode_payload(p)?);
                }
            }
        }
        Ok(Frame { msg_type: self.msg_type(), payload: out })
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, WireError> {
        let mut r = Reader::new(&frame.payload);
        let msg = match frame.msg_type {
            MsgType::Hello => {
                if frame.payload.is_empty() {
                    Message::Hello { client_id: String::new(), reference: None }
                } else {
                    let client_id = get_str(&mut r)?;
                    let reference = match r.u8()? {
                        0 => None,
                        1 => {
                            let rows = r.u32()? as usize;
                            let cols = r.u32()? as usize;
                            let n = rows
                                .checked_mul(cols)
                                .ok_or_else(|| WireError::Malformed("reference size overflows".into()))?;
                            let data = r.f64s(n)?;
                            if data.iter().any(|v| !v.is_finite()) {
                                return Err(WireError::Malformed("reference sample is not finite".into()));
                            }
                            Some(Matrix::new(rows, cols, data).map_err(|e| WireError::Malformed(format!("{e}")))?)
                        }
                        f => return Err(WireError::Malformed(format!("reference flag {f}"))),
                    };
                    Message::Hello { client_id, reference }
                }
            }
            MsgType::GlobalModel => Message::GlobalModel { round: r.u32()?, payload: read_payload(&mut r)? },
            MsgType::UpdateSubmit => {
                let round = r.u32()?;
                let local_loss = r.f64()?;
                Message::UpdateSubmit { round, local_loss, payload: read_payload(&mut r)? }
            }
            MsgType::RoundAck => Message::RoundAck { round: r.u32()? },
            MsgType::ClientError => Message::ClientError { round: r.u32()?, message: get_str(&mut r)? },
            MsgType::Shutdown => {
                let payload = if frame.payload.is_empty() { None } else { Some(read_payload(&mut r)?) };
                Message::Shutdown { payload }
            }
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_frame(&self.to_frame()?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        Message::from_frame(&decode_frame(bytes)?)
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<(), WireError> {
    let n = u32::try_from(n).map_err(|_| WireError::Malformed(format!("length {n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    put_len(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn get_str(r: &mut Reader<'_>) -> Result<String, WireError> {
    let len = r.u32()? as usize;
    let bytes = r.take(len)?;
    core::str::from_utf8(bytes).map(String::from).map_err(|_| WireError::Malformed("string is not UTF-8".into()))
}

/// A model file is a single `GlobalModel` frame for round 0 carrying every
/// layer.
pub fn serialize_model(model: &MlpModel) -> Result<Vec<u8>, WireError> {
    let mask = alloc::vec![true; model.len()];
    let payload = ModelPayload::from_model(model, &mask, 0, 1.0).map_err(|e| WireError::Malformed(format!("{e}")))?;
    Message::GlobalModel { round: 0, payload }.encode()
}

pub fn deserialize_model(bytes: &[u8]) -> Result<MlpModel, WireError> {
    let payload = match Message::decode(bytes)? {
        Message::GlobalModel { payload, .. } => payload,
        other => return Err(WireError::UnexpectedMessage(other.name())),
    };
    let mut layers = Vec::with_capacity(payload.layers.len());
    for (expected, pl) in payload.layers.into_iter().enumerate() {
        if pl.index != expected {
            return Err(WireError::Malformed(format!("model file layer {} found at position {expected}", pl.index)));
        }
        layers.push(pl.layer);
    }
    MlpModel::new(layers).map_err(|e| WireError::Malformed(format!("{e}")))
}
