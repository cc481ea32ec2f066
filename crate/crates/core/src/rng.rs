//! Seed derivation.
//!
//! Every source of randomness in the crate is a `ChaCha8` stream whose seed is
//! derived from a single experiment seed plus a fixed domain tag (and, where
//! needed, an index such as an epoch number or sample id). Dedicated
//! substreams keep edits in one place from perturbing randomness elsewhere:
//! changing the dataset does not change weight init, pruning does not change
//! the shuffle order of the surviving samples' epochs, and per-sample
//! counter-based seeding makes generation order-independent, so parallel and
//! sequential execution produce identical bytes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags for seed derivation. The numeric values are part of the
/// persisted-artifact contract: changing them changes every derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Base-dataset generation, per split.
    Dataset = 1,
    /// Per-sample noise draw inside a dataset.
    Sample = 2,
    /// Network weight initialization.
    Init = 3,
    /// Per-epoch shuffle order.
    Shuffle = 4,
    /// `SelectionRule::Random` draws.
    Select = 5,
    /// Training stage of a pipeline (reference and retrain alike).
    TrainStage = 6,
    /// Identifiability probe training.
    Probe = 7,
    /// Toy-data helpers in tests and benches.
    Aux = 8,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, domain, index)`.
pub fn derive(seed: u64, domain: Domain, index: u64) -> u64 {
    let mut s = splitmix64(seed);
    s = splitmix64(s ^ (domain as u64).wrapping_mul(GOLDEN));
    splitmix64(s ^ index.wrapping_mul(GOLDEN))
}

/// A seeded stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, domain, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_domain_separated() {
        let a = derive(42, Domain::Init, 0);
        let b = derive(42, Domain::Init, 0);
        assert_eq!(a, b);
        assert_ne!(derive(42, Domain::Init, 0), derive(42, Domain::Shuffle, 0));
        assert_ne!(derive(42, Domain::Shuffle, 0), derive(42, Domain::Shuffle, 1));
        assert_ne!(derive(42, Domain::Init, 0), derive(43, Domain::Init, 0));
    }

    #[test]
    fn streams_reproduce() {
        use rand::Rng;
        let mut r1 = stream(7, Domain::Sample, 123);
        let mut r2 = stream(7, Domain::Sample, 123);
        let x: [u64; 4] = r1.random();
        let y: [u64; 4] = r2.random();
        assert_eq!(x, y);
    }
}
