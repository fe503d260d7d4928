//! Deterministic keyed randomness.
//!
//! Every random quantity in the simulator is a pure function of a small
//! integer key: the run seed, a stream tag, and whatever indices identify
//! the draw (round, node, edge endpoints, sample). Keys are mixed with
//! splitmix64 into either a single uniform scalar or a full ChaCha8
//! stream, so results never depend on call order, thread scheduling, or
//! platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating independent uses of the same (seed, round, node)
/// key. Values are arbitrary but frozen: changing them changes every run.
pub mod stream {
    pub const EDGES: u64 = 0x01;
    pub const INIT_PARAMS: u64 = 0x02;
    pub const GRAD_NOISE: u64 = 0x03;
    pub const BATCH: u64 = 0x04;
    pub const QUAD_MATRIX: u64 = 0x05;
    pub const QUAD_CENTER: u64 = 0x06;
    pub const LOGISTIC_DATA: u64 = 0x07;
    pub const DIVERSITY_PROBE: u64 = 0x08;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse a key tuple into one well-mixed word.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3; // arbitrary non-zero start
    for &w in words {
        acc = splitmix(acc ^ splitmix(w));
    }
    acc
}

/// One uniform draw in [0, 1) from a key tuple.
pub fn keyed_uniform(words: &[u64]) -> f64 {
    // 53 mantissa bits give the usual dyadic uniform.
    (hash_words(words) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A full RNG stream derived from a key tuple, for draws that need more
/// than one scalar (Gaussian vectors, shuffles, batches).
pub fn keyed_rng(words: &[u64]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (k, chunk) in seed.chunks_exact_mut(8).enumerate() {
        let mut key = words.to_vec();
        key.push(k as u64);
        chunk.copy_from_slice(&hash_words(&key).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
