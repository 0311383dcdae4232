//! Quadratic Lyapunov certificates with decay rates and disturbance gains,
//! plus certified l2 gains from the bounded-real test.
//!
//! ```bash
//! cargo run --example dissipation_certificates
//! ```

use hmpc::certificates::{
    compute_dissipation, l2_gain, small_gain_check, solve_discrete_lyapunov, verify_dissipation,
};
use hmpc::model::{augment, double_integrator_cascade};
use hmpc::synthesis::{build_exact_gain_set, GainSpec};
use nalgebra::DMatrix;

fn main() {
    let model = double_integrator_cascade();
    let aug = augment(&model);
    let gains = build_exact_gain_set(&model, &aug, &GainSpec::identity_lqr(4, 1), 1e-6).unwrap();

    // outer loop: V1(x) = xᵀQx with AᵀQA - Q = -I on the closed loop
    let acl_out = gains.closed_outer(&aug);
    let q = solve_discrete_lyapunov(&acl_out, &DMatrix::identity(4, 4)).unwrap();
    let channels = vec![("vtilde".to_string(), aug.b1aug.clone())];
    let outer = compute_dissipation(&acl_out, &channels, &q, 0.5).unwrap();
    println!("outer: alpha1 = {:.6e}", outer.alpha);
    for g in &outer.gains {
        println!("outer: gamma_bar[{}] = {:.6e}", g.name, g.gamma_bar);
    }
    println!(
        "outer PSD witness re-check: {}",
        verify_dissipation(&outer, &acl_out, &channels)
    );

    // inner loop under exact matching: undisturbed contraction at rate Af
    let acl_in = gains.closed_inner(&model);
    let p = solve_discrete_lyapunov(&acl_in, &DMatrix::identity(2, 2)).unwrap();
    let inner = compute_dissipation(&acl_in, &[], &p, 0.5).unwrap();
    println!("inner: alpha2 = {:.6e}", inner.alpha);

    // certified channel gains and the small-gain condition
    let gamma1 = l2_gain(&acl_out, &aug.b1aug, &(-gains.k1.clone()), 1e-6).unwrap();
    println!("l2 gain vtilde -> v_des: {:.6}", gamma1.gamma);
    println!(
        "small gain gamma1 * gamma2 = {:.6} < 1: {}",
        gamma1.gamma * gains.gamma2.gamma,
        small_gain_check(&gamma1, &gains.gamma2)
    );

    // a textbook check: x+ = 0.5x + w, y = x has l2 gain exactly 2
    let g = l2_gain(
        &DMatrix::from_row_slice(1, 1, &[0.5]),
        &DMatrix::identity(1, 1),
        &DMatrix::identity(1, 1),
        1e-6,
    )
    .unwrap();
    println!("scalar low-pass gain: {:.6} (exact value 2)", g.gamma);
}
