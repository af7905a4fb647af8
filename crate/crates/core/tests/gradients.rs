//! Reverse-mode gradients of every tape operation and of the full model
//! against central finite differences on seeded random inputs.

mod common;

use lpfl::numerics::gradcheck::{check_gradients, GradCheckConfig};

const SEEDS: u64 = 8;

#[test]
fn every_operation_matches_central_differences() {
    let cfg = GradCheckConfig::default();
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for (seed, case) in common::all_cases(SEEDS) {
        let report = check_gradients(&case.params, &case.loss, &cfg).unwrap();
        assert!(report.entries_checked > 0, "{} checked nothing", case.name);
        checked += 1;
        if !report.passed(&cfg) {
            failures.push(format!(
                "seed {seed}, {}: relative error {:.3e} at {:?}",
                case.name, report.max_rel_error, report.worst
            ));
        }
    }
    assert!(checked >= 100, "only {checked} cases");
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
