//! Deterministic seed derivation.
//!
//! One root seed drives the whole run; every stage and every independent
//! work item draws from a named sub-stream so output never depends on
//! iteration order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a root seed with a label into a new 64-bit seed (FNV-1a + splitmix).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ root.wrapping_mul(0x9e3779b97f4a7c15);
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix(h)
}

/// Mix a root seed with an index, for per-item sub-streams.
pub fn derive_seed_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix(derive_seed(root, label) ^ index.wrapping_mul(0xd1342543de82ef95))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// The RNG used everywhere randomness is needed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
