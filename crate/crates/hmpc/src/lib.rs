//! Two-layer hierarchical model predictive control with an inner-loop
//! reference model.
//!
//! The toolkit covers the full design pipeline for a discrete-time
//! actuator/plant cascade:
//!
//! 1. [`model`] — cascade, reference model, error system, augmented outer
//!    loop, and structural assumption checks.
//! 2. [`synthesis`] — terminal control gains for exact or inexact
//!    reference-model matching.
//! 3. [`certificates`] — quadratic Lyapunov functions, dissipation
//!    constants, and certified l2 gains with a small-gain test.
//! 4. [`sets`] — λ-contractive ellipsoidal terminal sets with level values
//!    from the saturation caps.
//! 5. [`rate`] — rate-like constraint budgets and finite-time convergence
//!    horizons.
//! 6. [`qcqp`] / [`mpc`] — the convex QCQP solver and the outer/inner
//!    receding-horizon problem builders.
//! 7. [`harness`] — closed-loop simulation with the terminal/MPC switching
//!    law and run certification.
//!
//! [`scenario`], [`bundle`], and [`workbench`] provide the file-level
//! front end used by the `hmpc` binary; [`verification`] holds the
//! Monte Carlo shadow checks behind `hmpc certify`.
//!
//! Run `cargo run --example closed_loop` for an end-to-end tour, or see
//! the `examples/` directory for one runnable example per capability.
//!
//! ```
//! use hmpc::certificates::{compute_dissipation, solve_discrete_lyapunov};
//! use hmpc::model::{augment, double_integrator_cascade};
//! use hmpc::sets::{build_exact_sets, saturation_caps};
//! use hmpc::synthesis::{build_exact_gain_set, GainSpec};
//! use nalgebra::DMatrix;
//!
//! let model = double_integrator_cascade();
//! let aug = augment(&model);
//! let gains = build_exact_gain_set(&model, &aug, &GainSpec::identity_lqr(4, 1), 1e-6)?;
//!
//! let q = solve_discrete_lyapunov(&gains.closed_outer(&aug), &DMatrix::identity(4, 4))?;
//! let outer = compute_dissipation(
//!     &gains.closed_outer(&aug),
//!     &[("vtilde".to_string(), aug.b1aug.clone())],
//!     &q,
//!     0.5,
//! )?;
//! let p = solve_discrete_lyapunov(&gains.closed_inner(&model), &DMatrix::identity(2, 2))?;
//! let inner = compute_dissipation(&gains.closed_inner(&model), &[], &p, 0.5)?;
//!
//! let caps = saturation_caps(&model, &gains)?;
//! let sets = build_exact_sets(&outer, &inner, caps, &model.c, outer.alpha / 2.0)?;
//! assert!(sets.g1.level > 0.0 && sets.g1.lambda < 1.0);
//! assert!(sets.g2.level > 0.0 && sets.g2.lambda < 1.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bundle;
pub mod certificates;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod qcqp;
pub mod rate;
pub mod scenario;
pub mod sets;
pub mod synthesis;
pub mod verification;
pub mod workbench;

pub use certificates::{
    compute_dissipation, l2_gain, small_gain_check, solve_discrete_lyapunov, verify_dissipation,
    DissipationCertificate, GainEstimate,
};
pub use harness::{certify_run, CertificationReport, Harness, SimulationRun};
pub use model::{augment, validate_assumptions, AugmentedOuterModel, CascadeModel, StateBundle};
pub use mpc::{build_inner_problem, build_outer_problem, TrajectoryPlan};
pub use qcqp::{solve, Constraint, QcqpProblem, QcqpSolution, SolveStatus};
pub use rate::{convergence_horizons, derive_budgets, RateBudget};
pub use sets::{
    build_exact_sets, build_inexact_sets, saturation_caps, ContractiveSet, SetPairCertificate,
};
pub use synthesis::{
    design_exact_matching, design_inexact_matching, design_outer_gain, GainSpec, MatchingMode,
    TerminalGainSet,
};
