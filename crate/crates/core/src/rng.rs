//! Counter-based random streams.
//!
//! Every random draw in the library is keyed by `(seed, index)`: the stream for
//! a given key is a ChaCha8 generator seeded with `seed` on stream `index`. Two
//! draws with different indices never share state, so a batch can be sampled
//! in any order (or in parallel) and still reproduce bit-for-bit.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive an independent child seed, e.g. one per chain or per sweep point.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // stream u64::MAX - tag is reserved for seed derivation so it never collides
    // with the low-index sample streams.
    stream(seed, u64::MAX - tag).next_u64()
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Categorical draw from (unnormalized-free) probabilities summing to one.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
