//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random stream is keyed by a master seed and a path of integer tags
//! (replication, cluster, column, ...). Streams never share state, so the
//! values a stream produces do not depend on which thread draws them or in
//! what order streams are opened.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every stream.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a seed and a tag path into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed ^ GOLDEN), |acc, &tag| {
        mix64(
            acc.wrapping_add(GOLDEN)
                .wrapping_add(mix64(tag.wrapping_add(GOLDEN))),
        )
    })
}

/// Opens the stream identified by `seed` and `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let root = derive_seed(seed, path);
    let mut key = [0u8; 32];
    let mut state = root;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(GOLDEN);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    StreamRng::from_seed(key)
}
