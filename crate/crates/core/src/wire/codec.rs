use alloc::format;
use alloc::vec::Vec;

use super::{Reader, WireError};
use crate::federation::{ModelPayload, PayloadLayer};
use crate::linalg::Matrix;
use crate::model::{Activation, Layer};

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<(), WireError> {
    let v = u32::try_from(v).map_err(|_| WireError::Malformed(format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Layout: `u32 layer_count`, then per layer `u32 index, u32 rows, u32 cols,
/// u8 activation, u8 frozen, rows·cols f64 weights, rows f64 biases`, then
/// `u64 n_k, f64 relevance`. Everything little-endian.
pub fn encode_payload(payload: &ModelPayload) -> Result<Vec<u8>, WireError> {
    let size: usize = payload.layers.iter().map(|l| 14 + 8 * (l.layer.weights.data().len() + l.layer.bias.len())).sum();
    let mut out = Vec::with_capacity(4 + size + 16);
    put_u32(&mut out, payload.layers.len(), "layer count")?;
    for PayloadLayer { index, layer } in &payload.layers {
        if !layer.is_finite() {
            return Err(WireError::NonFinite { layer: *index });
        }
        put_u32(&mut out, *index, "layer index")?;
        put_u32(&mut out, layer.weights.rows(), "row count")?;
        put_u32(&mut out, layer.weights.cols(), "column count")?;
        out.push(layer.activation.tag());
        out.push(layer.frozen as u8);
        for w in layer.weights.data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out.extend_from_slice(&payload.n_k.to_le_bytes());
    if !payload.relevance.is_finite() {
        return Err(WireError::Malformed("relevance is not finite".into()));
    }
    out.extend_from_slice(&payload.relevance.to_le_bytes());
    Ok(out)
}

pub(crate) fn read_payload(r: &mut Reader<'_>) -> Result<ModelPayload, WireError> {
    let count = r.u32()? as usize;
    // Smallest possible layer is 14 header bytes plus one weight and one bias.
    if count > r.remaining() / 30 {
        return Err(WireError::Malformed(format!("{count} layers cannot fit in {} bytes", r.remaining())));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let index = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 {
            return Err(WireError::Malformed(format!("layer {index} has an empty {rows}x{cols} weight matrix")));
        }
        let tag = r.u8()?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| WireError::Malformed(format!("unknown activation tag {tag}")))?;
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(WireError::Malformed(format!("frozen flag {f}"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| WireError::Malformed("weight count overflows".into()))?;
        let weights = r.f64s(n)?;
        let bias = r.f64s(rows)?;
        let layer = Layer {
            weights: Matrix::new(rows, cols, weights).map_err(|e| WireError::Malformed(format!("{e}")))?,
            bias,
            activation,
            frozen,
        };
        if !layer.is_finite() {
            return Err(WireError::NonFinite { layer: index });
        }
        layers.push(PayloadLayer { index, layer });
    }
    let n_k = r.u64()?;
    let relevance = r.f64()?;
    if !relevance.is_finite() {
        return Err(WireError::Malformed("relevance is not finite".into()));
    }
    Ok(ModelPayload { layers, n_k, relevance })
}

pub fn decode_payload(bytes: &[u8]) -> Result<ModelPayload, WireError> {
    let mut r = Reader::new(bytes);
    let payload = read_payload(&mut r)?;
    r.finish()?;
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpModel;
    use alloc::vec;

    #[test]
    fn unit_weight_bytes_at_weight_offset() {
        let layer = Layer::new(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0.0], Activation::Linear).unwrap();
        let p = ModelPayload { layers: vec![PayloadLayer { index: 0, layer }], n_k: 1, relevance: 1.0 };
        let bytes = encode_payload(&p).unwrap();
        // count + index + rows + cols + tag + flag
        let off = 4 + 12 + 2;
        assert_eq!(&bytes[off..off + 8], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
        assert_eq!(bytes.len(), off + 16 + 16);
    }

    #[test]
    fn random_model_round_trips_bit_exact() {
        let m = MlpModel::build(&[4, 7, 3, 1], Activation::Tanh, Activation::Linear, 11).unwrap();
        let p = ModelPayload::from_model(&m, &[true, false, true], 42, 0.25).unwrap();
        let back = decode_payload(&encode_payload(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        for (a, b) in back.layers.iter().zip(&p.layers) {
            for (x, y) in a.layer.weights.data().iter().zip(b.layer.weights.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn nan_weight_is_rejected() {
        let mut m = MlpModel::build(&[2, 2], Activation::Linear, Activation::Linear, 1).unwrap();
        m.layers_mut()[0].weights.data_mut()[1] = f64::NAN;
        let p = ModelPayload::from_model(&m, &[true], 1, 1.0).unwrap();
        assert_eq!(encode_payload(&p), Err(WireError::NonFinite { layer: 0 }));
    }

    #[test]
    fn truncation_is_reported() {
        let m = MlpModel::build(&[3, 2], Activation::Linear, Activation::Linear, 1).unwrap();
        let bytes = encode_payload(&ModelPayload::from_model(&m, &[true], 1, 1.0).unwrap()).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode_payload(&bytes[..cut]).is_err());
        }
    }
}
