use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable hash of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize infallibly");
    hex_prefix(&Sha256::digest(&bytes), 16)
}

pub fn hex_prefix(bytes: &[u8], n_bytes: usize) -> String {
    bytes.iter().take(n_bytes).map(|b| format!("{b:02x}")).collect()
}

/// Short stable hash of raw bytes.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex_prefix(&Sha256::digest(bytes), 16)
}
