//! Deterministic seed derivation.
//!
//! Every random decision in the crate flows from an explicit `u64` seed
//! through [`derive_seed`], so runs are reproducible bit-for-bit and
//! independent sub-streams (per network, per epoch, per sample) never
//! alias each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated RNG streams apart.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    NetInit(u64),
    Corruption,
    SynthSample(u64),
    Split,
    EpochShuffle(u64),
    Augment { epoch: u64, sample: u64 },
}

impl Stream {
    fn tag(self) -> (u64, u64) {
        match self {
            Stream::NetInit(i) => (1, i),
            Stream::Corruption => (2, 0),
            Stream::SynthSample(i) => (3, i),
            Stream::Split => (4, 0),
            Stream::EpochShuffle(e) => (5, e),
            Stream::Augment { epoch, sample } => (6, epoch.wrapping_mul(0x1_0000_0001) ^ sample),
        }
    }
}

/// SplitMix64 finalizer; good avalanche, cheap, stable.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a root seed and a stream tag.
pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    let (kind, idx) = stream.tag();
    splitmix64(splitmix64(root ^ kind.wrapping_mul(0xa076_1d64_78bd_642f)) ^ idx)
}

/// Seeded generator for a derived stream.
pub fn stream_rng(root: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// Seeded generator directly from a raw seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, Stream::NetInit(0));
        let b = derive_seed(7, Stream::NetInit(1));
        let c = derive_seed(7, Stream::Corruption);
        assert_eq!(a, derive_seed(7, Stream::NetInit(0)));
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn different_roots_diverge() {
        assert_ne!(
            derive_seed(1, Stream::Split),
            derive_seed(2, Stream::Split)
        );
    }
}
