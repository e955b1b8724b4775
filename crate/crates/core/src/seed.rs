//! Structured seed derivation.
//!
//! Independent tasks (grid cells, repeats, k-means restarts, CV folds) each
//! get their own RNG stream derived from a root seed and a path of indices,
//! so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of indices into a root seed.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(root);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(root: u64, path: &[u64]) -> Rng {
    rng(derive(root, path))
}
