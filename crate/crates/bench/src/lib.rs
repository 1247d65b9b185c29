//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use copt_core::constraints::{build_reject_controlled_rejection, FnProbModel};
use copt_core::{ActionSpace, FiniteInstance, Problem, WeightedSupport};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Controlled rejection over `n` random points with `k` classes.
pub fn rejection_problem(n: usize, k: usize, budget: f64, seed: u64) -> (Problem<usize>, WeightedSupport<usize>) {
    let rows = random_probs(&mut ChaCha8Rng::seed_from_u64(seed), n, k);
    let model = Arc::new(FnProbModel::new(k, move |&i: &usize| Ok(rows[i].clone())));
    let p = build_reject_controlled_rejection(model, k, budget).expect("valid budget");
    (p, WeightedSupport::uniform((0..n).collect()).expect("nonempty"))
}

/// Random instance with action 0 strictly feasible.
pub fn random_instance(n: usize, a: usize, m: usize, seed: u64) -> FiniteInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss = (0..n).map(|_| (0..a).map(|_| rng.random::<f64>()).collect()).collect();
    let costs = (0..n)
        .map(|_| DMatrix::from_fn(m, a, |_, j| if j == 0 { -0.5 } else { rng.random_range(-1.0..1.0) }))
        .collect();
    FiniteInstance::new(ActionSpace::labels(a), vec![Vec::new(); n], vec![1.0 / n as f64; n], loss, costs, m).expect("consistent shapes")
}
