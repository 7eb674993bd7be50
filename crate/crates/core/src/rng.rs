//! Seeded random streams. Every stochastic step draws from its own ChaCha
//! stream so that adding draws to one step never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) mod stream {
    pub const PARTITION: u64 = 1;
    pub const PERTURBATION: u64 = 2;
    pub const SVD: u64 = 3;
    pub const SELECTION: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    /// Per-fold plans use `FOLD_BASE + fold`.
    pub const FOLD_BASE: u64 = 1 << 32;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
