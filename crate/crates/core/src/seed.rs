//! Deterministic random-stream derivation.
//!
//! Every random stream in the crate is keyed by a base seed, a textual tag and
//! a list of integer indices (episode, timestep, rollout, ...). Streams never
//! depend on execution order, so parallel and sequential runs agree bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

fn key_bytes(base: u64, tag: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    let out = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

/// Derive a child seed from `(base, tag, indices)`.
pub fn derive(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let key = key_bytes(base, tag, indices);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

/// Open an independent random stream keyed by `(base, tag, indices)`.
pub fn stream(base: u64, tag: &str, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::from_seed(key_bytes(base, tag, indices))
}

/// Stable 64-bit FNV-1a hash, used for string keys that feed stream indices.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}
