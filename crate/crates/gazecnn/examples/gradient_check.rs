//! Run every finite-difference gradient suite and print the report.
//!
//! Same output as `gazecnn gradcheck`. The suites perturb inputs through
//! the forward kernels only, so they are independent of the backward
//! implementations they verify.

use gazecnn::gradcheck::run_all;

fn main() {
    let outcomes = run_all(2024, None);
    let mut failed = 0;
    for o in &outcomes {
        println!("{o}");
        if !o.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all {} suites passed", outcomes.len());
    } else {
        eprintln!("{failed} suite(s) FAILED");
        std::process::exit(5);
    }
}
