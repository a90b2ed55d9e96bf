//! Loss decisions for the simulated channels.
//!
//! Generator: xoshiro256** seeded from a `u64` through SplitMix64 (the
//! reference seeding). Stream `k` is the base generator advanced by `k`
//! jumps of 2^128 steps, so every link direction draws from its own
//! non-overlapping sequence and adding a link never perturbs the others.
//! A draw maps the top 53 bits of `next_u64` to `[0, 1)`; a frame is lost
//! when the draw is below the link's loss probability.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Clone, Debug)]
pub struct LossRng(Xoshiro256StarStar);

impl LossRng {
    pub fn stream(seed: u64, index: usize) -> Self {
        let mut r = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..index {
            r.jump();
        }
        LossRng(r)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// One Bernoulli trial. Consumes exactly one draw.
    pub fn lose(&mut self, loss: f64) -> bool {
        self.next_unit() < loss
    }
}
