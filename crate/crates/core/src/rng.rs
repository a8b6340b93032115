//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream)`; ChaCha is a
//! counter-based cipher, so a `(seed, stream)` pair yields the same sequence on
//! every platform and streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named stream identifiers used by the simulators and estimators.
pub mod streams {
    pub const COVARIATES: u64 = 1;
    pub const TREATMENT: u64 = 2;
    pub const OUTCOME: u64 = 3;
    pub const CENSORING: u64 = 4;
    pub const LATENT: u64 = 5;
    pub const FOLDS: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const SUBSAMPLE: u64 = 8;
    pub const EVALUATION: u64 = 9;
    pub const CALIBRATION: u64 = 10;
}

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for replication `rep` of an experiment seeded with `base`.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
