//! Named, reproducible random sub-streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! key comes from a [`Seed`]. Seeds form a tree: `Seed::new(7).child(3)`
//! is a fixed function of `(7, 3)`, so work partitioned across threads
//! produces the same numbers as a sequential run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream labels used by the library. Arbitrary `u64` labels work too.
pub mod label {
    pub const FIT: u64 = 0x6669_7400;
    pub const CHAIN: u64 = 0x6368_6169;
    pub const RISK: u64 = 0x7269_736b;
    pub const CONDITIONAL: u64 = 0x636f_6e64;
    pub const SYNTH: u64 = 0x7379_6e74;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(u64);

impl Seed {
    pub fn new(seed: u64) -> Self {
        Seed(seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Derive an independent child seed.
    pub fn child(self, index: u64) -> Seed {
        Seed(splitmix64(
            self.0 ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        ))
    }

    /// Child keyed by a sequence of words, e.g. the bit patterns of a
    /// parameter vector, so that equal keys give equal streams.
    pub fn child_keyed(self, key: &[u64]) -> Seed {
        key.iter().fold(self, |s, &k| s.child(k))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Take a fresh seed from an existing stream. Consumes exactly one `u64`.
    pub fn from_rng<R: RngCore + ?Sized>(rng: &mut R) -> Seed {
        Seed(rng.next_u64())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1). Consumes exactly one `u64`.
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
