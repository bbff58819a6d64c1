//! Randomized invariants of the algebra, transforms, minimizer and
//! perturbation step.

mod common;

#[test]
fn polynomial_algebra_laws() {
    common::polynomial_laws(100).unwrap();
}

#[test]
fn transforms_round_trip() {
    common::transform_round_trips(100).unwrap();
}

#[test]
fn newton_inverts_action_values() {
    common::newton_round_trips(100).unwrap();
}

#[test]
fn minimizer_is_constrained_and_stationary() {
    common::minimizer_optimality(20, 100).unwrap();
}

#[test]
fn minimizer_structure() {
    common::minimizer_structure(100).unwrap();
}

#[test]
fn theta_tables_are_linear_and_start_at_zero() {
    common::theta_table_properties(100).unwrap();
}

#[test]
fn invariant_inverts_forward_transform() {
    common::inverse_consistency(100).unwrap();
}

#[test]
fn solve_is_deterministic() {
    common::solve_determinism().unwrap();
}
