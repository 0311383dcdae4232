//! End-to-end closed loop, fully in-process: synthesize gains, certificates,
//! sets, and budgets, then run the switching controller from an exterior
//! state and certify the run.
//!
//! ```bash
//! cargo run --example closed_loop
//! ```

use hmpc::certificates::{compute_dissipation, solve_discrete_lyapunov};
use hmpc::harness::{certify_run, ControllerMode, Harness, HarnessConfig};
use hmpc::model::{augment, double_integrator_cascade, StateBundle};
use hmpc::mpc::StageWeights;
use hmpc::rate::{derive_budgets, with_horizons};
use hmpc::sets::{build_exact_sets, saturation_caps};
use hmpc::synthesis::{build_exact_gain_set, GainSpec};
use nalgebra::{DMatrix, DVector};

fn main() {
    let model = double_integrator_cascade();
    let aug = augment(&model);
    let gains = build_exact_gain_set(&model, &aug, &GainSpec::identity_lqr(4, 1), 1e-6).unwrap();
    let acl_out = gains.closed_outer(&aug);
    let q = solve_discrete_lyapunov(&acl_out, &DMatrix::identity(4, 4)).unwrap();
    let outer = compute_dissipation(
        &acl_out,
        &[("vtilde".to_string(), aug.b1aug.clone())],
        &q,
        0.5,
    )
    .unwrap();
    let acl_in = gains.closed_inner(&model);
    let p = solve_discrete_lyapunov(&acl_in, &DMatrix::identity(2, 2)).unwrap();
    let inner = compute_dissipation(
        &acl_in,
        &[
            ("v_des".to_string(), gains.vdes_channel(&model)),
            ("x_f".to_string(), gains.xf_channel(&model)),
        ],
        &p,
        0.5,
    )
    .unwrap();
    let caps = saturation_caps(&model, &gains).unwrap();
    let sets = build_exact_sets(&outer, &inner, caps, &model.c, outer.alpha / 2.0).unwrap();
    let budget = with_horizons(
        derive_budgets(&model, &aug, &sets, 10, 0.9, 0.5).unwrap(),
        &sets,
        &model,
        &aug,
    )
    .unwrap();
    println!(
        "budgets: delta_u = {:.3e}, delta_vdes = {:.3e}, N1* = {}, N2* = {}",
        budget.delta_u_max, budget.delta_vdes_max, budget.n1_star, budget.n2_star
    );

    let config = HarnessConfig {
        outer_weights: StageWeights::identity(4, 1),
        inner_weights: StageWeights::scaled(2, 1, 1.0, 0.01),
    };
    let initial = StateBundle {
        x1: DVector::from_row_slice(&[0.4, -0.2]),
        x2: DVector::from_row_slice(&[0.1, 0.05]),
        xf: DVector::from_row_slice(&[0.08, 0.02]),
    };
    let (mut harness, mut run) = Harness::initialize(
        model.clone(),
        aug,
        gains,
        sets.clone(),
        budget.clone(),
        config,
        initial,
        "closed-loop-example",
    )
    .expect("initial state is inside the region of attraction");
    harness
        .run(&mut run, 600)
        .expect("persistent feasibility holds inside X");

    let switch = run
        .records
        .iter()
        .position(|r| r.mode == ControllerMode::Terminal);
    println!("entered the terminal region at step {:?}", run.k_g);
    println!("terminal law took over at step {switch:?}");
    for r in run.records.iter().take(14) {
        println!(
            "  k = {:>2}  mode = {:<8}  V1 = {:.4e}  V2 = {:.4e}  u = {:+.4}",
            r.k,
            format!("{:?}", r.mode),
            r.v1,
            r.v2,
            r.u[0]
        );
    }
    println!(
        "final stacked norm after 600 steps: {:.3e}",
        run.final_norm()
    );

    let report = certify_run(&run, &sets, &budget, &model);
    for v in &report.verdicts {
        println!(
            "verdict {}: {} ({})",
            v.name,
            if v.passed { "pass" } else { "FAIL" },
            v.detail
        );
    }
}
