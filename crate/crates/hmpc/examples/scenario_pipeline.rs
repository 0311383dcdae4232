//! The file-driven pipeline used by the `hmpc` binary: synthesize a
//! certificate bundle from a scenario, simulate under it, and re-run the
//! sampling checks — including the failure exit codes on the fault
//! fixtures.
//!
//! ```bash
//! cargo run --example scenario_pipeline
//! ```

use std::path::Path;

use hmpc::workbench;

fn main() {
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let out = std::env::temp_dir().join("hmpc_scenario_pipeline");
    std::fs::create_dir_all(&out).unwrap();

    let cert = out.join("sys_a_exact.certificate.json");
    let code = workbench::cmd_synthesize(&scenarios.join("sys_a_exact.toml"), &cert, None).unwrap();
    println!("synthesize sys_a_exact: exit {code}");

    let trace = out.join("sys_a_exact.trace.csv");
    let report = out.join("sys_a_exact.report.json");
    let code = workbench::cmd_simulate(
        &scenarios.join("sys_a_exact.toml"),
        &cert,
        Some(600),
        &trace,
        &report,
    )
    .unwrap();
    println!("simulate sys_a_exact (600 steps): exit {code}");
    println!("  trace:  {}", trace.display());
    println!("  report: {}", report.display());

    let code =
        workbench::cmd_certify(&cert, 10_000, hmpc::verification::DEFAULT_SEED, None).unwrap();
    println!("certify sys_a_exact: exit {code}");

    // fault fixtures exercise the non-zero exit codes
    let code = workbench::cmd_synthesize(
        &scenarios.join("sys_a_assumption_violation.toml"),
        &out.join("bad_bf.certificate.json"),
        None,
    )
    .unwrap();
    println!("synthesize sys_a_assumption_violation: exit {code} (structural failure)");

    let code = workbench::cmd_synthesize(
        &scenarios.join("sys_a_gamma_inflated.toml"),
        &out.join("inflated.certificate.json"),
        None,
    )
    .unwrap();
    println!("synthesize sys_a_gamma_inflated: exit {code} (solvability failure)");

    let farx = out.join("not_in_x.certificate.json");
    workbench::cmd_synthesize(&scenarios.join("sys_a_not_in_x.toml"), &farx, None).unwrap();
    let code = workbench::cmd_simulate(
        &scenarios.join("sys_a_not_in_x.toml"),
        &farx,
        None,
        &out.join("not_in_x.trace.csv"),
        &out.join("not_in_x.report.json"),
    )
    .unwrap();
    println!("simulate sys_a_not_in_x: exit {code} (outside the region of attraction)");
}
