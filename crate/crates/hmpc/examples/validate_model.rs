//! Structural assumption checks on a cascade model, including how failures
//! are witnessed.
//!
//! ```bash
//! cargo run --example validate_model
//! ```

use hmpc::model::{double_integrator_cascade, validate_assumptions};
use nalgebra::DMatrix;

fn main() {
    let model = double_integrator_cascade();
    println!("== healthy sample cascade ==");
    for check in &validate_assumptions(&model).checks {
        println!(
            "  {:?}: {}",
            check.assumption,
            if check.passed { "pass" } else { "FAIL" }
        );
    }

    // an unstable reference model fails with the offending eigenvalue
    let mut broken = model.clone();
    broken.af = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 1.5]);
    println!("== reference model scaled to 1.5 I ==");
    for check in &validate_assumptions(&broken).checks {
        if !check.passed {
            println!(
                "  {:?}: FAIL, witness {:?}",
                check.assumption, check.witness
            );
        }
    }

    // an input matrix loading a shift row breaks the row-inclusion structure
    let mut broken = model;
    broken.bf = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    println!("== Bf mass moved onto the shift row ==");
    for check in &validate_assumptions(&broken).checks {
        if !check.passed {
            println!(
                "  {:?}: FAIL, witness {:?}",
                check.assumption, check.witness
            );
        }
    }
}
