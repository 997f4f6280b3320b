//! Parameter blobs: `u32` little-endian header length, a JSON header, then
//! every parameter as a little-endian `f64` in [`MlpParams::tensors`] order.

use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, MlpShape};
use crate::error::NeuralError;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub format_version: u32,
    pub shape: MlpShape,
    pub layers: Vec<(usize, usize)>,
    pub num_params: usize,
}

impl ParamsHeader {
    pub fn for_shape(shape: MlpShape) -> Self {
        Self {
            format_version: PARAMS_FORMAT_VERSION,
            shape,
            layers: shape.layer_dims().to_vec(),
            num_params: shape.num_params(),
        }
    }
}

pub fn write_payload(params: &MlpParams, out: &mut Vec<u8>) {
    out.reserve(params.num_params() * 8);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads exactly `shape.num_params()` floats from the front of `bytes`.
pub fn read_payload(shape: MlpShape, bytes: &[u8]) -> Result<MlpParams, NeuralError> {
    let need = shape.num_params() * 8;
    if bytes.len() < need {
        return Err(NeuralError::Format(format!(
            "payload holds {} bytes, shape needs {need}",
            bytes.len()
        )));
    }
    let mut params = MlpParams::zeros(shape);
    let mut chunks = bytes[..need].chunks_exact(8);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
    }
    if !params.is_finite() {
        return Err(NeuralError::Format("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn encode_params(params: &MlpParams) -> Vec<u8> {
    let header =
        serde_json::to_vec(&ParamsHeader::for_shape(params.shape())).expect("header serializes");
    let mut out = Vec::with_capacity(4 + header.len() + params.num_params() * 8);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    write_payload(params, &mut out);
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<MlpParams, NeuralError> {
    let fmt = |m: &str| NeuralError::Format(m.to_string());
    let len_bytes: [u8; 4] = bytes
        .get(..4)
        .ok_or_else(|| fmt("truncated header length"))?
        .try_into()
        .expect("4 bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(4..4 + header_len)
        .ok_or_else(|| fmt("truncated header"))?;
    let header: ParamsHeader =
        serde_json::from_slice(header_bytes).map_err(|e| NeuralError::Format(e.to_string()))?;
    if header.format_version != PARAMS_FORMAT_VERSION {
        return Err(NeuralError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header != ParamsHeader::for_shape(header.shape) {
        return Err(fmt("header fields disagree with shape"));
    }
    let payload = &bytes[4 + header_len..];
    if payload.len() != header.num_params * 8 {
        return Err(fmt("payload length disagrees with header"));
    }
    read_payload(header.shape, payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blobs_round_trip_bit_exactly(
            input in 1usize..20, h0 in 1usize..10, h1 in 1usize..10, output in 1usize..6, seed in any::<u64>()
        ) {
            let p = MlpParams::init(MlpShape::new(input, [h0, h1], output), &mut SimRng::seed_from_u64(seed));
            let blob = encode_params(&p);
            let back = decode_params(&blob).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(encode_params(&back), blob);
        }
    }

    #[test]
    fn truncated_and_tampered_blobs_fail() {
        let p = MlpParams::init(MlpShape::new(3, [4, 4], 2), &mut SimRng::seed_from_u64(0));
        let blob = encode_params(&p);
        assert!(decode_params(&blob[..blob.len() - 1]).is_err());
        assert!(decode_params(&blob[..3]).is_err());
        let needle = b"\"format_version\":1";
        let at = blob
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut tampered = blob.clone();
        tampered[at + needle.len() - 1] = b'9';
        let err = decode_params(&tampered).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
