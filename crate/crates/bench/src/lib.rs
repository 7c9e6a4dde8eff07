//! Input generators shared by the benchmarks.

use std::collections::BTreeMap;

use lscd_core::bos::BosVector;
use lscd_core::postproc::{self, NormalizedDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` binary vectors over `dims` terms with about `active` terms set each.
pub fn random_vectors(n: usize, dims: usize, active: usize, seed: u64) -> Vec<BosVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = active as f64 / dims as f64;
    (0..n)
        .map(|i| {
            let counts = (0..dims).filter(|_| rng.gen_bool(p)).map(|d| (d, 1));
            BosVector::new(format!("e{i}"), counts)
        })
        .collect()
}

/// One distribution of `k` substitutes per pattern, drawn from a shared pool.
pub fn random_patterns(
    ids: &[&str],
    k: usize,
    pool: usize,
    seed: u64,
) -> BTreeMap<String, NormalizedDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.iter()
        .map(|id| {
            let entries: Vec<(String, f64)> = (0..k)
                .map(|_| {
                    (
                        format!("w{}", rng.gen_range(0..pool)),
                        rng.gen_range(1e-4..0.05),
                    )
                })
                .collect();
            (id.to_string(), postproc::merge_duplicates("x", entries))
        })
        .collect()
}
