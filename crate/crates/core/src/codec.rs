//! Small encoding helpers shared by the model containers: little-endian f64
//! blobs in base64, content hashes and named seed derivation.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(blob: &str, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(blob)
        .map_err(|e| Error::Corrupt(format!("bad base64 blob: {e}")))?;
    if bytes.len() != expected_len * 8 {
        return Err(Error::Corrupt(format!(
            "blob holds {} bytes, expected {}",
            bytes.len(),
            expected_len * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt("non-finite parameter".into()));
    }
    Ok(values)
}

/// Derives a child seed from a parent seed and a stage name. Every random
/// stream in the pipeline is obtained this way from one user seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_blob_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 0..64)) {
            let blob = encode_f64s(&values);
            prop_assert_eq!(decode_f64s(&blob, values.len()).unwrap(), values);
        }
    }

    #[test]
    fn blob_length_is_checked() {
        let blob = encode_f64s(&[1.0, 2.0]);
        assert!(decode_f64s(&blob, 3).is_err());
        assert!(decode_f64s("!!", 0).is_err());
    }

    #[test]
    fn derived_seeds_depend_on_name_and_parent() {
        assert_eq!(derive_seed(1, "ner"), derive_seed(1, "ner"));
        assert_ne!(derive_seed(1, "ner"), derive_seed(1, "encoder"));
        assert_ne!(derive_seed(1, "ner"), derive_seed(2, "ner"));
    }
}
