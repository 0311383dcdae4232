//! Contractive terminal set construction with saturation caps, plus a
//! sampled contraction check under the terminal laws.
//!
//! ```bash
//! cargo run --example terminal_sets
//! ```

use hmpc::certificates::{compute_dissipation, solve_discrete_lyapunov};
use hmpc::model::{augment, double_integrator_cascade};
use hmpc::sets::{build_exact_sets, saturation_caps};
use hmpc::synthesis::{build_exact_gain_set, GainSpec};
use hmpc::verification;
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
    println!(
        "saturation caps: x1_max = {:.6}, xtilde_max = {:.6}",
        caps.0, caps.1
    );

    let sets = build_exact_sets(&outer, &inner, caps, &model.c, outer.alpha / 2.0).unwrap();
    println!("V1* = {:.6e} (branch {:?})", sets.g1.level, sets.v1_branch);
    println!("V2* = {:.6e} (branch {:?})", sets.g2.level, sets.v2_branch);
    println!(
        "lambda1 = {:.6}, lambda2 = {:.6}",
        sets.g1.lambda, sets.g2.lambda
    );
    println!(
        "margins: Delta1 = {:.6e}, Delta2 = {:.6e}",
        sets.g1.margin(),
        sets.g2.margin()
    );

    // sampled shadow of the contraction guarantee
    let mut rng = verification::seeded_rng(verification::DEFAULT_SEED);
    let report = verification::check_contraction(&model, &aug, &gains, &sets, 10_000, &mut rng);
    println!(
        "contraction check: {} samples, {} violations",
        report.samples_run,
        report.violations.len()
    );
}
