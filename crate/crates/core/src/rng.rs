//! Seeded generators. Every replicate gets its own ChaCha stream derived from
//! one root seed, so replicate `r` can be reproduced without running `0..r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for observation-path sampling.
pub const PATH_STREAM: u64 = u64::MAX;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    stream_rng(seed, replicate)
}

pub fn path_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, PATH_STREAM)
}

/// Inverse-CDF draw from a discrete distribution given as linear weights that
/// sum to (approximately) `total`. Falls back to the last positive entry when
/// rounding leaves `u` past the end.
pub fn sample_index(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}
