//! Seeded random streams. Every random quantity in the crate derives from a
//! `(seed, stream)` pair so runs are bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The seed used throughout unless configured otherwise.
pub const DEFAULT_SEED: u64 = 1006;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Named streams so independent consumers of one seed never overlap.
pub(crate) mod streams {
    pub const DIRECTION_INIT: u64 = 1;
    pub const BOOST_NOISE: u64 = 2;
    pub const DEGENERATE_FIX: u64 = 3;
    pub const TOY_BACKEND: u64 = 10;
    pub const TOY_EMBEDDER: u64 = 11;
    pub const TOY_ATTRIBUTES: u64 = 12;
    pub const TOY_EVAL: u64 = 13;
}
