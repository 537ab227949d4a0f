//! Stream seeds derived from a base seed and integer keys.

/// splitmix64 finaliser over `seed` and `index`; distinct keys give
/// statistically independent streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds several keys into one seed, left to right.
pub fn mix_keys(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(seed, |acc, &k| mix_seed(acc, k))
}
