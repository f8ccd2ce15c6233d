//! Deterministic seed derivation.
//!
//! Every stochastic component takes its RNG from a master seed plus a string
//! label, so independent pipeline stages get independent streams and a whole
//! run is reproducible from a single integer.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Derive a child seed from a master seed and a stream label.
///
/// Uses splitmix64-style mixing over the master seed and the label bytes;
/// the same (seed, label) pair always yields the same child.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for &b in label.as_bytes() {
        state = state.wrapping_add(b as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 31;
    }
    // Final splitmix64 finalizer.
    state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for a named stream under a master seed.
pub fn stream_rng(master: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, label))
}
