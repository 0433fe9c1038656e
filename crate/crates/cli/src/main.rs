use std::path::PathBuf;
use std::process::ExitCode;

use bsde_cli::{run_config, Command};
use clap::{Parser, Subcommand};

/// Numerical lab for transposition solutions of backward SDEs.
#[derive(Debug, Parser)]
#[command(name = "bsde-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for report.json and solution.csv.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Replace `ensemble.seed` from the config.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Solve the configured problem.
    Solve,
    /// Solve and run the duality test suite.
    Verify,
    /// Check the comparison theorem against the [comparison] problem.
    Compare,
    /// Compare whole-horizon and restricted solves.
    Consistency,
    /// Refinement study over steps, paths and state degrees.
    Sweep,
    /// Simulate the ensemble into the configured cache file.
    Cache,
}

impl From<&Sub> for Command {
    fn from(s: &Sub) -> Self {
        match s {
            Sub::Solve => Command::Solve,
            Sub::Verify => Command::Verify,
            Sub::Compare => Command::Compare,
            Sub::Consistency => Command::Consistency,
            Sub::Sweep => Command::Sweep,
            Sub::Cache => Command::Cache,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    match run_config(config, Command::from(&cli.command), cli.seed_override, cli.out_dir.as_deref()) {
        Ok(output) => {
            let report = &output.report;
            if let Some(err) = &report.error {
                eprintln!("error: {err}");
            }
            if !cli.quiet || !report.pass {
                if cli.out_dir.is_none() {
                    match report.to_json() {
                        Ok(text) => print!("{text}"),
                        Err(e) => eprintln!("error: {e}"),
                    }
                }
                eprintln!("{}", if report.pass { "PASS" } else { "FAIL" });
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
