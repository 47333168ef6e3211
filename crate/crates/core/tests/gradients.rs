//! Finite-difference checks for every differentiable block and the full model.

use afd_core::nnet::gradcheck::{standard_suite, BlockCheck};

fn run(seed: u64) -> Vec<BlockCheck> {
    let checks = standard_suite(1e-5, seed).unwrap();
    for c in &checks {
        println!("{:<42} rel {:.2e} abs {:.2e} over {} coords", c.name, c.report.max_rel_error, c.report.max_abs_error, c.report.coordinates);
    }
    checks
}

#[test]
fn every_block_passes() {
    let checks = run(0);
    assert_eq!(checks.len(), 11);
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn passes_at_another_seed() {
    let checks = run(1);
    assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    assert!(checks.iter().all(|c| c.report.coordinates > 0));
}
