//! Deterministic seed derivation for independent random streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step, the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// 32-byte seed for stream `index` under `root`. Distinct indices give
/// unrelated streams; the same pair always gives the same stream.
pub fn split_seed(root: u64, index: u64) -> [u8; 32] {
    let mut state = root ^ 0xA076_1D64_78BD_642F ^ index.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// Convenience wrapper returning the generator itself.
pub fn split_rng(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(split_seed(root, index))
}
