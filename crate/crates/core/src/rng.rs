use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible random stream: one ChaCha8 key (the seed) and one of its
/// 2^64 independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// The stream `offset` positions further along.
    pub fn offset(self, offset: u64) -> Self {
        RngStream { seed: self.seed, stream_id: self.stream_id.wrapping_add(offset) }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Derives an unrelated seed from a parent seed and an index (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_reproduce_and_differ() {
        let a: Vec<u64> = (0..8).map(|_| 0).scan(RngStream::new(42, 0).rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(RngStream::new(42, 0).rng(), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..8).map(|_| 0).scan(RngStream::new(42, 1).rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
