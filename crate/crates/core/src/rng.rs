//! Reproducible random streams.
//!
//! Every trajectory draws from its own ChaCha8 stream selected by
//! `(seed, trajectory, purpose)`, so an ensemble is the same whatever the
//! thread count or the order in which trajectories are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Distinct purposes never share numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Initial = 0,
    Noise = 1,
    LongRun = 2,
    Resample = 3,
}

pub fn stream(seed: u64, trajectory: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normals<R: rand::Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for x in buf {
        *x = StandardNormal.sample(rng);
    }
}
