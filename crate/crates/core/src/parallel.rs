//! Seed derivation and an order-preserving parallel map.
//!
//! Every task draws from its own stream seeded by `(master, tag, index)`, so
//! results never depend on how many workers run or in what order tasks
//! finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Stream tags keep derived seeds for different purposes apart.
pub mod stream {
    pub const REPLICATE_DATA: u64 = 0x5245_504c;
    pub const REPLICATE_FIT: u64 = 0x5246_4954;
    pub const SIM_DATASET: u64 = 0x5349_4d44;
    pub const SIM_FIT: u64 = 0x5349_4d46;
    pub const SIM_CALIBRATE: u64 = 0x5349_4d43;
    pub const MONTH: u64 = 0x4d4f_4e54;
    pub const TEST_DATASET: u64 = 0x5445_5354;
    pub const VB_GRAD: u64 = 0x4752_4144;
    pub const VB_CRN: u64 = 0x4352_4e5f;
    pub const VB_DRAWS: u64 = 0x4452_4157;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Maps `f` over `items` with at most `workers` threads, returning results
/// in input order.
///
/// Inside an existing rayon pool the current pool is reused so nested maps
/// share one set of workers.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    if rayon::current_thread_index().is_some() {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(e) => {
            log::warn!("falling back to serial execution: {e}");
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }
}
