//! File-level front end: synthesize, simulate, certify, report. Each
//! command returns a process exit code; all diagnostics also land in the
//! written report files.
//!
//! Exit codes: 0 success; 2 structural assumption failure; 3 small-gain or
//! level-solvability failure; 4 initial state outside the region of
//! attraction; 5 closed-loop theory violation (including failed run
//! verdicts); 6 sampling verification found a witness. Usage and I/O
//! errors surface as `Err` and map to exit 1 in the binary.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bundle::{
    scenario_hash, CertificateBundle, DesignEcho, SmallGainData, SolvabilityData, SynthesisReport,
};
use crate::certificates::{compute_dissipation, solve_discrete_lyapunov};
use crate::harness::{certify_run, write_trace, Harness, HarnessConfig, HarnessError};
use crate::model::augment;
use crate::mpc::StageWeights;
use crate::rate::{derive_budgets, with_horizons};
use crate::scenario::{Scenario, ScenarioError};
use crate::sets::{build_exact_sets, build_inexact_sets, saturation_caps, SetsError};
use crate::synthesis::{
    build_exact_gain_set, build_inexact_gain_set, MatchingMode, SynthesisError,
};
use crate::{bundle, verification};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ASSUMPTION: u8 = 2;
pub const EXIT_SOLVABILITY: u8 = 3;
pub const EXIT_NOT_IN_X: u8 = 4;
pub const EXIT_THEORY: u8 = 5;
pub const EXIT_SAMPLING: u8 = 6;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Bundle(#[from] bundle::BundleError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sets(#[from] SetsError),
    #[error(transparent)]
    Rate(#[from] crate::rate::RateError),
    #[error(transparent)]
    Certificate(#[from] crate::certificates::CertificateError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn weight(
    spec: &crate::scenario::WeightSpec,
    dim: usize,
    name: &'static str,
) -> Result<nalgebra::DMatrix<f64>, WorkbenchError> {
    Ok(spec.to_matrix(dim, name)?)
}

/// Runs the full design pipeline on a scenario file and writes the
/// structured report (bundle on success, diagnostics otherwise).
pub fn cmd_synthesize(
    scenario_path: &Path,
    out_path: &Path,
    mode_override: Option<MatchingMode>,
) -> Result<u8, WorkbenchError> {
    let text = std::fs::read_to_string(scenario_path)?;
    let sc = Scenario::parse_str(&text)?;
    let name = sc.metadata.name.clone();
    let hash = scenario_hash(&text);
    let mode = mode_override.unwrap_or(sc.design.matching);

    let mut report = SynthesisReport {
        outcome: "error".into(),
        scenario_name: name.clone(),
        scenario_hash: hash,
        assumption_report: None,
        small_gain: None,
        solvability: None,
        error: None,
        bundle: None,
    };

    let (model, assumptions) = match sc.to_model() {
        Ok(pair) => pair,
        Err(ScenarioError::Assumptions {
            summary,
            report: areport,
        }) => {
            report.outcome = "assumption_failure".into();
            report.assumption_report = Some(*areport);
            report.error = Some(summary);
            report.save(out_path)?;
            return Ok(EXIT_ASSUMPTION);
        }
        Err(e) => return Err(e.into()),
    };
    report.assumption_report = Some(assumptions);

    let aug = augment(&model);
    let n = model.n1() + model.n2();
    let outer_spec = crate::synthesis::GainSpec::Lqr {
        state_weight: weight(&sc.design.outer_state_weight, n, "outer_state_weight")?,
        input_weight: weight(
            &sc.design.outer_input_weight,
            model.q(),
            "outer_input_weight",
        )?,
    };
    let inner_spec = crate::synthesis::GainSpec::Lqr {
        state_weight: weight(
            &sc.design.inner_state_weight,
            model.n2(),
            "inner_state_weight",
        )?,
        input_weight: weight(
            &sc.design.inner_input_weight,
            model.p(),
            "inner_input_weight",
        )?,
    };

    let gains = match mode {
        MatchingMode::Exact => build_exact_gain_set(&model, &aug, &outer_spec, sc.design.gain_tol),
        MatchingMode::Inexact => {
            build_inexact_gain_set(&model, &aug, &outer_spec, &inner_spec, sc.design.gain_tol)
        }
    };
    let gains = match gains {
        Ok(g) => g,
        Err(SynthesisError::SmallGainFailure {
            gamma1,
            gamma2,
            product,
        }) => {
            report.outcome = "small_gain_failure".into();
            report.small_gain = Some(SmallGainData {
                gamma1,
                gamma2,
                product,
            });
            report.error = Some(format!("small-gain product {product} >= 1"));
            report.save(out_path)?;
            return Ok(EXIT_SOLVABILITY);
        }
        Err(SynthesisError::NotStabilizable { re, im }) => {
            report.outcome = "assumption_failure".into();
            report.error = Some(format!(
                "v_des channel not stabilizable at eigenvalue {re}{im:+}i (reference-model zero diagnostic)"
            ));
            report.save(out_path)?;
            return Ok(EXIT_ASSUMPTION);
        }
        Err(e) => {
            report.error = Some(e.to_string());
            report.save(out_path)?;
            return Err(e.into());
        }
    };
    report.small_gain = Some(SmallGainData {
        gamma1: gains.gamma1.gamma,
        gamma2: gains.gamma2.gamma,
        product: gains.gamma1.gamma * gains.gamma2.gamma,
    });

    // Lyapunov certificates with S = I on both closed loops
    let acl_out = gains.closed_outer(&aug);
    let q = solve_discrete_lyapunov(&acl_out, &nalgebra::DMatrix::identity(n, n))?;
    let mut outer_cert = compute_dissipation(
        &acl_out,
        &[("vtilde".to_string(), aug.b1aug.clone())],
        &q,
        sc.design.theta,
    )?;
    let acl_in = gains.closed_inner(&model);
    let p_mat = solve_discrete_lyapunov(
        &acl_in,
        &nalgebra::DMatrix::identity(model.n2(), model.n2()),
    )?;
    let mut inner_cert = compute_dissipation(
        &acl_in,
        &[
            ("v_des".to_string(), gains.vdes_channel(&model)),
            ("x_f".to_string(), gains.xf_channel(&model)),
        ],
        &p_mat,
        sc.design.theta,
    )?;
    // fault-injection knob: scaling up is sound (the PSD witness survives),
    // and deliberately breaking the solvability gate is its test purpose
    if sc.design.gamma_bar_scale != 1.0 {
        for g in outer_cert
            .gains
            .iter_mut()
            .chain(inner_cert.gains.iter_mut())
        {
            g.gamma_bar *= sc.design.gamma_bar_scale;
        }
    }

    let caps = saturation_caps(&model, &gains)?;
    let eps1 = sc.design.eps1.unwrap_or(outer_cert.alpha / 2.0);
    let eps2 = sc.design.eps2.unwrap_or(inner_cert.alpha / 2.0);
    let sets = match mode {
        MatchingMode::Exact => build_exact_sets(&outer_cert, &inner_cert, caps, &model.c, eps1)?,
        MatchingMode::Inexact => {
            match build_inexact_sets(
                &outer_cert,
                &inner_cert,
                caps,
                &gains.k1,
                &model.c,
                eps1,
                eps2,
            ) {
                Ok(s) => s,
                Err(SetsError::Unsolvable { lhs, rhs }) => {
                    report.outcome = "solvability_failure".into();
                    report.solvability = Some(SolvabilityData {
                        satisfied: false,
                        lhs,
                        rhs,
                    });
                    report.error =
                        Some(format!("level equations unsolvable: lhs {lhs} < rhs {rhs}"));
                    report.save(out_path)?;
                    return Ok(EXIT_SOLVABILITY);
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    if let Some(ok) = sets.solvability_ok {
        // recompute both sides for the report
        let gbar1 = outer_cert.gamma_bar("vtilde").unwrap_or(0.0);
        let gbar21 = inner_cert.gamma_bar("v_des").unwrap_or(0.0);
        let gbar22 = inner_cert.gamma_bar("x_f").unwrap_or(0.0);
        let k1n = crate::linalg::spectral_norm(&gains.k1);
        let cn = crate::linalg::spectral_norm(&model.c);
        report.solvability = Some(SolvabilityData {
            satisfied: ok,
            lhs: eps1 * eps2 * inner_cert.lambda_min * outer_cert.lambda_min,
            rhs: gbar1 * cn * cn * (gbar21 * k1n * k1n + gbar22),
        });
    }

    let budget = with_horizons(
        derive_budgets(
            &model,
            &aug,
            &sets,
            sc.design.horizon,
            sc.design.beta,
            sc.design.split,
        )?,
        &sets,
        &model,
        &aug,
    )?;

    let design = DesignEcho {
        theta: sc.design.theta,
        eps1,
        eps2: Some(eps2),
        split: sc.design.split,
        horizon: sc.design.horizon,
        beta: sc.design.beta,
        stage_state_weight: bundle::matrix_rows(&weight(
            &sc.design.stage_state_weight,
            n,
            "stage_state_weight",
        )?),
        stage_input_weight: bundle::matrix_rows(&weight(
            &sc.design.stage_input_weight,
            model.q(),
            "stage_input_weight",
        )?),
        stage_error_weight: bundle::matrix_rows(&weight(
            &sc.design.stage_error_weight,
            model.n2(),
            "stage_error_weight",
        )?),
        stage_actuation_weight: bundle::matrix_rows(&weight(
            &sc.design.stage_actuation_weight,
            model.p(),
            "stage_actuation_weight",
        )?),
    };
    let solvability = report.solvability.clone();
    report.outcome = "ok".into();
    report.bundle = Some(CertificateBundle::assemble(
        &text,
        &name,
        &model,
        design,
        &gains,
        &outer_cert,
        &inner_cert,
        &sets,
        &budget,
        solvability,
    ));
    report.save(out_path)?;
    Ok(EXIT_OK)
}

fn harness_config(bundle: &CertificateBundle) -> Result<HarnessConfig, WorkbenchError> {
    Ok(HarnessConfig {
        outer_weights: StageWeights {
            state: bundle::rows_matrix(&bundle.design.stage_state_weight)?,
            input: bundle::rows_matrix(&bundle.design.stage_input_weight)?,
        },
        inner_weights: StageWeights {
            state: bundle::rows_matrix(&bundle.design.stage_error_weight)?,
            input: bundle::rows_matrix(&bundle.design.stage_actuation_weight)?,
        },
    })
}

/// Simulation outcome details, also serialized next to the trace.
#[derive(Debug, serde::Serialize)]
pub struct SimulateOutcome {
    pub exit_code: u8,
    pub verdicts_passed: Option<bool>,
    pub k_g: Option<usize>,
    pub detail: String,
}

/// Runs the closed loop from the scenario's initial state under the
/// certificates in the bundle; writes the CSV trace and the certification
/// report.
pub fn cmd_simulate(
    scenario_path: &Path,
    certificate_path: &Path,
    steps_override: Option<usize>,
    trace_path: &Path,
    report_path: &Path,
) -> Result<u8, WorkbenchError> {
    let text = std::fs::read_to_string(scenario_path)?;
    let sc = Scenario::parse_str(&text)?;
    let synth = SynthesisReport::load(certificate_path)?;
    let bundle = synth.require_bundle()?;
    bundle.verify_hash(&text)?;
    let parts = bundle.reconstruct()?;
    let config = harness_config(bundle)?;
    let initial = sc.initial_state(&parts.model)?;
    let steps = steps_override.unwrap_or(sc.run.steps);

    let init = Harness::initialize(
        parts.model.clone(),
        parts.aug,
        parts.gains,
        parts.sets.clone(),
        parts.budget.clone(),
        config,
        initial,
        &sc.metadata.name,
    );
    let (mut harness, mut run) = match init {
        Ok(pair) => pair,
        Err(e @ HarnessError::NotInRegionOfAttraction { .. }) => {
            let outcome = SimulateOutcome {
                exit_code: EXIT_NOT_IN_X,
                verdicts_passed: None,
                k_g: None,
                detail: e.to_string(),
            };
            std::fs::write(report_path, serde_json::to_string_pretty(&outcome)?)?;
            return Ok(EXIT_NOT_IN_X);
        }
        Err(e) => return Err(e.into()),
    };
    match harness.run(&mut run, steps) {
        Ok(()) => {}
        Err(e @ HarnessError::TheoryViolation { .. }) => {
            let trace = std::fs::File::create(trace_path)?;
            write_trace(&run, std::io::BufWriter::new(trace))?;
            let outcome = SimulateOutcome {
                exit_code: EXIT_THEORY,
                verdicts_passed: Some(false),
                k_g: run.k_g,
                detail: e.to_string(),
            };
            std::fs::write(report_path, serde_json::to_string_pretty(&outcome)?)?;
            return Ok(EXIT_THEORY);
        }
        Err(e) => return Err(e.into()),
    }

    let cert = certify_run(&run, &parts.sets, &parts.budget, &parts.model);
    let trace = std::fs::File::create(trace_path)?;
    write_trace(&run, std::io::BufWriter::new(trace))?;
    std::fs::write(report_path, serde_json::to_string_pretty(&cert)?)?;
    if cert.all_passed() {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_THEORY)
    }
}

/// Re-runs the sampling invariants recorded in a bundle.
pub fn cmd_certify(
    certificate_path: &Path,
    samples: usize,
    seed: u64,
    out_path: Option<&Path>,
) -> Result<u8, WorkbenchError> {
    let synth = SynthesisReport::load(certificate_path)?;
    let bundle = synth.require_bundle()?;
    let parts = bundle.reconstruct()?;
    let report = verification::run_all(
        &parts.model,
        &parts.aug,
        &parts.gains,
        &parts.sets,
        &parts.budget,
        samples,
        seed,
    );
    if let Some(path) = out_path {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if report.vacuous {
        println!("certify: no samples requested; vacuously passing");
        return Ok(EXIT_OK);
    }
    if report.passed() {
        println!(
            "certify: {} checks across the sampling suites, zero violations",
            report.samples_run
        );
        Ok(EXIT_OK)
    } else {
        for v in report.violations.iter().take(5) {
            println!(
                "violation [{}]: {} witness {:?}",
                v.check, v.detail, v.witness
            );
        }
        println!(
            "certify: {} violations in {} checks",
            report.violations.len(),
            report.samples_run
        );
        Ok(EXIT_SAMPLING)
    }
}

/// Pretty-prints the key constants of a synthesis report.
pub fn cmd_report(certificate_path: &Path) -> Result<u8, WorkbenchError> {
    let synth = SynthesisReport::load(certificate_path)?;
    println!(
        "scenario: {} ({})",
        synth.scenario_name, synth.scenario_hash
    );
    println!("outcome: {}", synth.outcome);
    if let Some(sg) = &synth.small_gain {
        println!(
            "small gain: gamma1 = {:.6}, gamma2 = {:.6}, product = {:.6}",
            sg.gamma1, sg.gamma2, sg.product
        );
    }
    if let Some(sol) = &synth.solvability {
        println!(
            "solvability: lhs = {:.6e}, rhs = {:.6e}, satisfied = {}",
            sol.lhs, sol.rhs, sol.satisfied
        );
    }
    if let Some(ar) = &synth.assumption_report {
        for c in &ar.checks {
            println!(
                "assumption {:?}: {}{}",
                c.assumption,
                if c.passed { "pass" } else { "FAIL" },
                c.witness
                    .as_ref()
                    .map(|w| format!(" (witness {w:?})"))
                    .unwrap_or_default()
            );
        }
    }
    if let Some(b) = &synth.bundle {
        println!("mode: {:?}", b.mode);
        println!(
            "levels: V1* = {:.6e} ({:?}), V2* = {:.6e} ({:?})",
            b.g1.level, b.v1_branch, b.g2.level, b.v2_branch
        );
        println!(
            "contraction: lambda1 = {:.6} (lambda1* = {:.6}), lambda2 = {:.6} (lambda2* = {:.6})",
            b.g1.lambda, b.g1.lambda_star, b.g2.lambda, b.g2.lambda_star
        );
        println!(
            "decay: alpha1 = {:.6e}, alpha2 = {:.6e}",
            b.outer_certificate.alpha, b.inner_certificate.alpha
        );
        for (name, g) in b
            .outer_certificate
            .channel_gains
            .iter()
            .chain(b.inner_certificate.channel_gains.iter())
        {
            println!("gamma_bar[{name}] = {g:.6e}");
        }
        println!(
            "caps: x1_max = {:.6e}, xtilde_max = {:.6e}",
            b.x1_max, b.xtilde_max
        );
        let bud = &b.budget;
        println!(
            "budgets: eps_vtilde = {:.6e}, eps_xf = {:.6e}, delta_u = {:.6e}, delta_vdes = {:.6e}",
            bud.eps_vtilde_max, bud.eps_xf_max, bud.delta_u_max, bud.delta_vdes_max
        );
        println!(
            "horizons: N = {}, beta = {}, N1* = {}, N2* = {}",
            bud.horizon, bud.beta, bud.n1_star, bud.n2_star
        );
        // recompute the lumped prediction-gap constants so the report pins
        // down exactly which channel composition produced the horizons
        if let Ok(parts) = b.reconstruct() {
            let q_lump = crate::linalg::power_impulse_norm_sum(
                &parts.aug.a1aug,
                &parts.aug.b1aug,
                bud.horizon,
            ) * bud.eps_vtilde_max
                + crate::linalg::power_impulse_norm_sum(
                    &parts.aug.a1aug,
                    &parts.aug.bfaug,
                    bud.horizon,
                ) * bud.delta_vdes_max;
            let p_lump = crate::linalg::power_impulse_norm_sum(
                &parts.model.a2,
                &parts.model.b2,
                bud.horizon,
            ) * bud.delta_u_max
                + bud.eps_xf_max;
            println!(
                "lumped gap constants: outer = {q_lump:.6e} (sum ‖A1aug^j B1aug‖ eps_vtilde + sum ‖A1aug^j Bfaug‖ delta_vdes), inner = {p_lump:.6e} (sum ‖A2^j B2‖ delta_u + eps_xf)"
            );
        }
    }
    if let Some(err) = &synth.error {
        println!("error: {err}");
    }
    Ok(EXIT_OK)
}

/// Derives the default output path for a command when none is given.
pub fn default_out(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}
