//! Seeded, platform-independent randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`] (ChaCha8) and
//! only asks for `u64`-ranged integers or `f64`s, so results do not depend on
//! pointer width. Sub-seeds are derived with SplitMix64 so that independent
//! work items (groups, resamples, retries) can run in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator, recorded in reports and config files.
pub const PRNG_NAME: &str = "chacha8";

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a sequence of integer keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// 64-bit FNV-1a, used to turn string keys into seed material.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Uniform index in `0..n`.
pub fn index(rng: &mut SeededRng, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

/// `k` distinct indices from `0..n` by partial Fisher-Yates, in draw order.
pub fn sample_without_replacement(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct items from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

pub fn sample_with_replacement(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| index(rng, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, &[0]);
        let b = derive_seed(7, &[1]);
        let c = derive_seed(8, &[0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[0]));
    }

    #[test]
    fn without_replacement_is_distinct() {
        let mut rng = rng_from_seed(3);
        let mut draw = sample_without_replacement(&mut rng, 52, 50);
        draw.sort_unstable();
        draw.dedup();
        assert_eq!(draw.len(), 50);
        assert!(draw.iter().all(|&i| i < 52));
    }

    #[test]
    fn fnv_known_value() {
        assert_eq!(hash_str(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(hash_str("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
