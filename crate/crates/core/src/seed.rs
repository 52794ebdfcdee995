//! Counter-based seed derivation.
//!
//! Every random task (a layer's node draw, one `(n, seed)` cell of a sweep)
//! gets its own ChaCha stream keyed by the master seed and a path of
//! integers, so results never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a task path.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0x6A09_E667_F3BC_C908, |acc, &k| mix(acc ^ mix(k)))
}

/// RNG for `path` under `master`.
pub fn task_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(path));
    rng
}

/// A plain `u64` seed for `path` under `master`, for APIs that take a seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    use rand::RngCore;
    task_rng(master, path).next_u64()
}

/// Stream tags used across the crate.
pub mod tag {
    pub const TEACHER: u64 = 1;
    pub const DATA: u64 = 2;
    pub const NODES: u64 = 3;
    pub const XSAMPLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const BATCH: u64 = 7;
}
