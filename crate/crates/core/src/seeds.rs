//! Named substreams of one master seed.

use sha2::{Digest, Sha256};

/// Seed for the stream `label` under `master`: the first eight bytes of
/// `SHA-256(master_le ‖ label)`, little-endian.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
