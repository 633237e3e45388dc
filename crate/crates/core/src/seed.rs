//! Stable seed derivation.
//!
//! Every random stream in a run is derived from the master seed and a tuple
//! of indices, so work can be scheduled in any order (or resumed from a
//! checkpoint) without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Cma = 1,
    Gp = 2,
    Episode = 3,
    Probes = 4,
    HeldOut = 5,
    Init = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed, a stream tag and any number of indices into one seed.
pub fn derive(master: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x5851_F42D_4C95_7F2D);
    h = splitmix64(h ^ stream as u64);
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn rng(master: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separates_streams() {
        assert_eq!(derive(7, Stream::Episode, &[1, 2, 3]), derive(7, Stream::Episode, &[1, 2, 3]));
        assert_ne!(derive(7, Stream::Episode, &[1, 2, 3]), derive(7, Stream::HeldOut, &[1, 2, 3]));
        assert_ne!(derive(7, Stream::Episode, &[1, 2, 3]), derive(7, Stream::Episode, &[1, 3, 2]));
        assert_ne!(derive(7, Stream::Episode, &[1]), derive(8, Stream::Episode, &[1]));
    }
}
