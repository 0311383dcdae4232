use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hmpc::synthesis::MatchingMode;
use hmpc::workbench;

#[derive(Parser)]
#[command(
    name = "hmpc",
    about = "Hierarchical MPC design, certification, and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the design pipeline on a scenario and write the certificate report.
    Synthesize {
        #[arg(long)]
        scenario: PathBuf,
        /// Output report path (default: <scenario>.certificate.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's matching mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Simulate the closed loop under a certificate bundle.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
        /// Trace CSV path (default: <scenario>.trace.csv); the certification
        /// report lands next to it with a .report.json extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Re-run the Monte Carlo shadow checks recorded in a certificate.
    Certify {
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = hmpc::verification::DEFAULT_SEED)]
        seed: u64,
        /// Optional JSON output with violations and witnesses.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the key constants of a certificate report.
    Report {
        #[arg(long)]
        certificate: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum Mode {
    Exact,
    Inexact,
}

impl From<Mode> for MatchingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => MatchingMode::Exact,
            Mode::Inexact => MatchingMode::Inexact,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize {
            scenario,
            out,
            mode,
        } => {
            let out = out.unwrap_or_else(|| workbench::default_out(&scenario, "certificate.json"));
            workbench::cmd_synthesize(&scenario, &out, mode.map(Into::into)).inspect(|_| {
                println!("synthesize: wrote {}", out.display());
            })
        }
        Command::Simulate {
            scenario,
            certificate,
            out,
            steps,
        } => {
            let trace = out.unwrap_or_else(|| workbench::default_out(&scenario, "trace.csv"));
            let report = trace.with_extension("report.json");
            workbench::cmd_simulate(&scenario, &certificate, steps, &trace, &report).inspect(|_| {
                println!(
                    "simulate: wrote {} and {}",
                    trace.display(),
                    report.display()
                )
            })
        }
        Command::Certify {
            certificate,
            samples,
            seed,
            out,
        } => workbench::cmd_certify(&certificate, samples, seed, out.as_deref()),
        Command::Report { certificate } => workbench::cmd_report(&certificate),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
