//! Reproducible randomness.
//!
//! All stochastic operations take an [`RngSource`], a (seed, stream) scheme
//! built on ChaCha12. Each simulated path draws from its own counter-indexed
//! stream, so an ensemble depends only on the seed and the number of paths,
//! never on scheduling or worker count. Independent subsystems (training
//! iterations, repetitions, chains) derive children with distinct labels.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Concrete generator used throughout the crate.
pub type Prng = ChaCha12Rng;

/// Identifier recorded in run metadata so results can name their generator.
pub const RNG_ALGORITHM: &str = "chacha12/splitmix-streams/v1";

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splittable, seedable source of independent ChaCha12 streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngSource {
    seed: u64,
}

impl RngSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child source. Distinct labels give statistically
    /// independent subtrees; the same label always gives the same subtree.
    pub fn child(&self, label: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x51ed_2701))),
        }
    }

    /// Generator for stream `id` of this source.
    pub fn stream(&self, id: u64) -> Prng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}
