//! With the same local model at every working point the scheduled
//! controller collapses to ordinary linear MPC: the outer iteration must
//! agree with a single condensed QP.

mod common;

use common::control::linear_case;

#[test]
fn identical_local_models_reduce_to_one_qp() {
    for seed in 0..50 {
        let (diff, iterations, converged) = linear_case(seed);
        assert!(converged && iterations <= 2, "seed {seed}: {iterations} iterations");
        assert!(diff < 1e-8, "seed {seed}: plans differ by {diff}");
    }
}
