//! Deterministic random streams.
//!
//! Every independent unit of work (a trajectory, a trial) owns a private
//! ChaCha stream selected by `(seed, index)`: the seed keys the cipher and the
//! index selects the 64-bit stream id, so streams never overlap and do not
//! depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws a standard normal vector of dimension `d`.
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> crate::Vector {
    use rand_distr::{Distribution, StandardNormal};
    crate::Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}
