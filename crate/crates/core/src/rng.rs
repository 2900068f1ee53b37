//! Keyed, counter-based random streams.
//!
//! Every random stream (parameter initialization, data shuffling) is a ChaCha8
//! keystream whose 256-bit key is the SHA-256 of a domain tag and the stream's
//! identifying parts. Two streams with the same key are identical regardless
//! of what else was drawn before, so initialization does not depend on merge
//! order and shuffling does not depend on which other jobs share the device.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const INIT_DOMAIN: &str = "hybridnn/init";
pub const SHUFFLE_DOMAIN: &str = "hybridnn/shuffle";

/// Builds the stream for `domain` keyed by `seed` and the given byte parts.
pub fn keyed_stream(domain: &str, seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
