//! Analytic cost derivatives and unicycle Jacobians against central finite
//! differences.

mod common;

use common::derivative_checks as checks;

#[test]
fn quadratic_terms_match_finite_differences() {
    checks::quadratic_terms_match_finite_differences();
}

#[test]
fn box_barrier_matches_finite_differences() {
    checks::box_barrier_matches_finite_differences();
}

#[test]
fn driving_terms_match_finite_differences() {
    checks::driving_terms_match_finite_differences();
}

#[test]
fn preset_costs_match_finite_differences() {
    checks::preset_costs_match_finite_differences();
}

#[test]
fn unicycle_jacobians_match_finite_differences() {
    checks::unicycle_jacobians_match_finite_differences();
}
