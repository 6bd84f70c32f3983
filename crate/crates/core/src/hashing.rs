use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First `n` hex characters of the SHA-256 digest.
pub(crate) fn short_hash(bytes: &[u8], n: usize) -> String {
    let mut s = sha256_hex(bytes);
    s.truncate(n);
    s
}

/// Derive an independent 64-bit seed for sub-stream `stream` of `seed`
/// (SplitMix64 finalizer over the pair).
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
