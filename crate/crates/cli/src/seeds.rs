//! One master seed fanned out into independent named streams.

use sha2::{Digest, Sha256};

/// First eight bytes (little endian) of SHA-256 over the master seed and the
/// stream name. Streams with different names are unrelated; the same name
/// always yields the same seed.
pub fn stream_seed(master: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
