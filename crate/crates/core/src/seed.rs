//! Seed derivation.
//!
//! Every stochastic component draws from a `ChaCha8Rng` seeded with a value
//! derived here, so a run is fully reproducible from one 64-bit master seed.

/// Weyl increment used by SplitMix64 (the 64-bit golden ratio).
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 step: advances `state` by the golden gamma and returns the
/// mixed output.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for run `run_index` of a sweep seeded with `master_seed`.
///
/// `child = splitmix64(master ^ (run_index * GOLDEN_GAMMA))`. The map
/// `run_index -> state` is injective (the gamma is odd) and the SplitMix64
/// finalizer is a bijection, so distinct indices never collide.
pub fn derive_child_seed(master_seed: u64, run_index: u64) -> u64 {
    splitmix64(master_seed ^ run_index.wrapping_mul(GOLDEN_GAMMA))
}

/// Sub-stream seeds inside a single run (population tiers, engine, ...).
pub(crate) fn substream(seed: u64, tag: u64) -> u64 {
    derive_child_seed(seed, tag.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference SplitMix64 generator, written as the usual stateful
    // `next()` so it does not share code with `splitmix64`.
    struct Reference(u64);

    impl Reference {
        fn next(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        }
    }

    #[test]
    fn zero_seed_matches_published_vector() {
        assert_eq!(derive_child_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        let mut reference = Reference(0);
        assert_eq!(derive_child_seed(0, 0), reference.next());
        // The reference stream's next outputs are the well-known
        // continuation of the seed-0 vector.
        assert_eq!(reference.next(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(reference.next(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn matches_reference_for_arbitrary_states() {
        for master in [1u64, 42, u64::MAX, 0xDEAD_BEEF] {
            for i in 0..64u64 {
                let mut reference = Reference(master ^ i.wrapping_mul(GOLDEN_GAMMA));
                assert_eq!(derive_child_seed(master, i), reference.next());
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(derive_child_seed(7, 99), derive_child_seed(7, 99));
    }

    #[test]
    fn neighbouring_indices_differ_over_first_million() {
        let master = 0x0123_4567_89AB_CDEF;
        let mut prev = derive_child_seed(master, 0);
        for i in 1..1_000_000u64 {
            let next = derive_child_seed(master, i);
            assert_ne!(prev, next, "collision at index {i}");
            prev = next;
        }
    }
}
