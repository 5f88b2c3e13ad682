//! Counter-based random streams, one per simulation unit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent stream for unit `index` under master `seed`.
///
/// The ChaCha key comes from the seed and the stream id is the unit index, so
/// any unit can be regenerated on its own and adding units never changes the
/// earlier ones.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Order-sensitive running digest of consumed draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Digest(pub u64);

impl Digest {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.0 = (self.0.rotate_left(7) ^ x.to_bits()).wrapping_mul(0x100_0000_01b3);
    }

    pub fn combine(&mut self, other: Digest) {
        self.0 = (self.0 ^ other.0)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .rotate_left(17);
    }
}
