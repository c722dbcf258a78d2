//! Deterministic stream derivation for Monte Carlo replicas.
//!
//! Every estimator takes an explicit seed and fans out over replicas, each
//! owning a ChaCha stream derived from `(seed, context, replica)`. Results
//! are therefore independent of thread count and scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Estimator contexts, kept distinct so different estimators never share a
/// stream even under the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum StreamContext {
    Matching = 1,
    Trajectory = 2,
    WeightOuter = 3,
    WeightInner = 4,
    QuasiTree = 5,
    Escape = 6,
    Drift = 7,
    Entropy = 8,
    RegenStats = 9,
    Coupling = 10,
    PermSample = 11,
    McTail = 12,
    Renewal = 13,
    Mineka = 14,
    Generic = 15,
}

/// ChaCha stream for one replica of one estimator.
pub fn stream_rng(seed: u64, context: StreamContext, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    debug_assert!(replica < 1 << 48);
    rng.set_stream(((context as u64) << 48) | replica);
    rng
}

/// 64-bit mix used to fold auxiliary labels (e.g. an `n` value) into a seed.
pub fn mix_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic hasher for internal maps (no per-process randomness).
#[derive(Default, Clone)]
pub struct FixedState(u64);

impl std::hash::Hasher for FixedState {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.0 = mix_seed(self.0, x);
    }

    fn write_u32(&mut self, x: u32) {
        self.write_u64(x as u64);
    }

    fn write_usize(&mut self, x: usize) {
        self.write_u64(x as u64);
    }
}

/// HashMap with the deterministic hasher above.
pub type DetHashMap<K, V> = std::collections::HashMap<K, V, std::hash::BuildHasherDefault<FixedState>>;
/// HashSet with the deterministic hasher above.
pub type DetHashSet<K> = std::collections::HashSet<K, std::hash::BuildHasherDefault<FixedState>>;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream_rng(7, StreamContext::Drift, 3);
        let mut b = stream_rng(7, StreamContext::Drift, 3);
        assert_eq!(a.next_u64(), b.next_u64());

        let mut c = stream_rng(7, StreamContext::Drift, 4);
        let mut d = stream_rng(7, StreamContext::Entropy, 3);
        let x = stream_rng(7, StreamContext::Drift, 3).next_u64();
        assert_ne!(c.next_u64(), x);
        assert_ne!(d.next_u64(), x);
    }
}
