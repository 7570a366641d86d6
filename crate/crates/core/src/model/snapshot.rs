//! Flat binary latent snapshots.
//!
//! Layout: 16-byte header then little-endian f64 data.
//! Header: magic `DSLT` (4 bytes), dtype code u16 (1 = f64), rank u16,
//! four u16 dims (unused trailing dims are 0). All header integers are
//! little-endian.

use super::{ModelError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSLT";
const DTYPE_F64: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode_latent(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() == 0 || t.rank() > 4 {
        return Err(ModelError::Snapshot(format!("rank {} is not storable", t.rank())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    for i in 0..4 {
        let d = t.shape().get(i).copied().unwrap_or(0);
        let d = u16::try_from(d).map_err(|_| ModelError::Snapshot(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_latent(bytes: &[u8]) -> Result<Tensor> {
    let err = |m: &str| ModelError::Snapshot(m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(err("missing DSLT header"));
    }
    let word = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    if word(4) != DTYPE_F64 as usize {
        return Err(err("unsupported dtype"));
    }
    let rank = word(6);
    if !(1..=4).contains(&rank) {
        return Err(err("bad rank"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| word(8 + 2 * i)).collect();
    let numel: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * numel {
        return Err(err("payload length does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = Tensor::from_fn(vec![4, 3, 5], |i| (i as f64 * 0.37).sin() / 3.0).unwrap();
        let bytes = encode_latent(&t).unwrap();
        assert_eq!(&bytes[..4], b"DSLT");
        assert_eq!(bytes.len(), 16 + 8 * 60);
        assert_eq!(decode_latent(&bytes).unwrap(), t);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let t = Tensor::zeros(vec![2, 2]);
        let mut bytes = encode_latent(&t).unwrap();
        bytes.pop();
        assert!(decode_latent(&bytes).is_err());
        assert!(decode_latent(b"NOPE0000000000000000").is_err());
    }
}
