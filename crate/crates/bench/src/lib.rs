//! Shared inputs for the criterion benchmarks.

use cvsf_core::{simulate, CheckLossProblem, Dataset, DgpSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A median regression on an intercept and `k - 1` uniform regressors with
/// heavy-ish noise.
pub fn random_problem(n: usize, k: usize, seed: u64) -> CheckLossProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
    let y = (0..n)
        .map(|i| design.row(i).sum() + rng.random::<f64>().powi(3) - 0.25)
        .collect();
    CheckLossProblem::new(y, &design, 0.5).expect("valid problem")
}

pub fn skewed_sample(n: usize, seed: u64) -> Dataset {
    simulate(&DgpSpec::continuous_skewed(seed), n)
        .expect("valid design")
        .data
}
