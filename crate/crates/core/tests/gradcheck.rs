//! Analytic training gradients against central finite differences.

mod common;

use common::*;

use ddpm_bound::net::Activation;

#[test]
fn gradients_match_finite_differences() {
    for act in [Activation::Silu, Activation::Softplus, Activation::Tanh] {
        let err = worst_relative_error(30, act, 7);
        assert!(err <= 1e-5, "{act:?}: {err}");
    }
}
