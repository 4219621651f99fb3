//! Canonical JSON and content hashing.
//!
//! `serde_json::Map` is ordered by key, so going through `Value` yields a
//! byte-stable, sorted-key rendering.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize `value` to compact JSON with sorted object keys.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("in-memory types always serialize");
    serde_json::to_string(&value).expect("Value always serializes")
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(to_canonical_string(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_at_every_depth() {
        let v = json!({"b": 1, "a": {"z": true, "c": [ {"y": 1, "x": 2} ]}});
        assert_eq!(to_canonical_string(&v), r#"{"a":{"c":[{"x":2,"y":1}],"z":true},"b":1}"#);
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
