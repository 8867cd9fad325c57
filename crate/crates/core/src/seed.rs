//! Deterministic seed derivation for independent simulation jobs.
//!
//! Every job (realization index, sweep point, retry attempt) obtains its RNG
//! seed as a pure function of the master seed and its own index. Results are
//! therefore independent of scheduling and worker count.

/// SplitMix64 finalizer. Stable across platforms and releases; do not change,
/// or archived runs stop being reproducible.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for job `index` derived from `master`.
pub fn job_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ (index.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Seed for a sub-stream (e.g. retry attempt `sub` of job `index`).
pub fn sub_seed(master: u64, index: u64, sub: u64) -> u64 {
    job_seed(job_seed(master, index), sub)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_seeds_are_stable() {
        // Frozen values: a change here breaks reproducibility of archived runs.
        assert_eq!(job_seed(0, 0), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(job_seed(42, 7), 0xcc86_8f8d_9bd2_3f76);
    }

    #[test]
    fn job_seeds_differ_across_indices() {
        let master = 123;
        let seeds: Vec<u64> = (0..100).map(|i| job_seed(master, i)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
    }

    #[test]
    fn sub_seeds_differ_from_job_seeds() {
        assert_ne!(sub_seed(1, 2, 0), job_seed(1, 2));
        assert_ne!(sub_seed(1, 2, 0), sub_seed(1, 2, 1));
    }
}
