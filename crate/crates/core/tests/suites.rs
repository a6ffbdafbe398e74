//! The randomized verification suites, each within its time budget.

use std::time::Duration;

use pkws::verify::{gradient_suite, invariance_suite, metric_oracle_suite, protocol_suite, SuiteOutcome};

const BUDGET: Duration = Duration::from_secs(60);

fn check(o: SuiteOutcome) {
    println!("{} passed={} in {:.2?}: {}", o.name, o.passed, o.elapsed, o.detail);
    assert!(o.passed, "{}: {}", o.name, o.detail);
    assert!(o.elapsed < BUDGET, "{} took {:?}", o.name, o.elapsed);
}

#[test]
fn gradients_match_finite_differences() {
    check(gradient_suite(50, 11));
}

#[test]
fn metrics_match_brute_force() {
    check(metric_oracle_suite(1000, 12));
}

#[test]
fn pair_and_batch_protocols_hold() {
    check(protocol_suite(100, 1000));
}

#[test]
fn scoring_invariances_hold() {
    check(invariance_suite(200, 13));
}
