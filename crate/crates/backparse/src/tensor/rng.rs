//! Seeded random state. ChaCha8 is counter-based, so a fixed seed gives
//! identical streams on every platform; the algorithm name travels with
//! checkpoints so loads can verify compatibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const RNG_ALGORITHM: &str = "chacha8";

pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).expect("invalid normal parameters").sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Derive an independent stream (e.g. one per worker or phase).
    pub fn fork(&mut self) -> RngState {
        let seed = self.rng.gen::<u64>();
        RngState::new(seed)
    }
}
