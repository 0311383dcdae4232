//! Trajectory-variation budgets and convergence horizons derived from the
//! set margins.
//!
//! ```bash
//! cargo run --example rate_budgets
//! ```

use hmpc::certificates::{compute_dissipation, solve_discrete_lyapunov};
use hmpc::model::{augment, double_integrator_cascade};
use hmpc::rate::{convergence_horizons, derive_budgets};
use hmpc::sets::{build_exact_sets, saturation_caps};
use hmpc::synthesis::{build_exact_gain_set, GainSpec};
use nalgebra::DMatrix;

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

    for horizon in [5, 10, 20] {
        let budget = derive_budgets(&model, &aug, &sets, horizon, 0.9, 0.5).unwrap();
        let (n1, n2) = convergence_horizons(&budget, &sets, &model, &aug).unwrap();
        println!("N = {horizon}:");
        println!("  eps_vtilde_max = {:.6e}", budget.eps_vtilde_max);
        println!("  eps_xf_max     = {:.6e}", budget.eps_xf_max);
        println!("  delta_u_max    = {:.6e}", budget.delta_u_max);
        println!("  delta_vdes_max = {:.6e}", budget.delta_vdes_max);
        println!(
            "  N1* = {n1}, N2* = {n2}, convergence bound = {}",
            n1.max(n2) + horizon
        );
    }
}
