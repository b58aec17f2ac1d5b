//! `rbflow`: run, sweep and verify flow scenarios, and query the
//! small-graph oracle.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbflow::scenario::{self, parse_config, run_scenario, sweep, verification_only, RunOutcome, SweepAxis};
use rbflow::spectral::{brute_force_small_eigen, Graph};

/// Output directory override for relative CSV and report paths.
const OUT_DIR_ENV: &str = "RBFLOW_OUT_DIR";

#[derive(Parser)]
#[command(name = "rbflow", version, about = "First p-Laplacian eigenvalue along Ricci-Bourguignon flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV and report.
    Run { config: PathBuf },
    /// Run a scenario once per value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run only the variation formula and pointwise identity checks.
    Verify { config: PathBuf },
    /// Brute-force first eigenvalue of a small graph.
    Oracle {
        graph: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)
}

fn load(path: &Path) -> Result<scenario::ScenarioConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| match e {
        rbflow::Error::Config(list) => {
            let mut msg = format!("{}: invalid scenario", path.display());
            for item in list {
                msg.push_str("\n  ");
                msg.push_str(&item);
            }
            msg
        }
        other => format!("{}: {other}", path.display()),
    })
}

fn summarize(outcome: &RunOutcome) {
    print!("{}", outcome.report);
    println!("csv: {}", outcome.csv_path.display());
    println!("report: {}", outcome.report_path.display());
}

fn execute(cli: Cli) -> Result<i32, String> {
    let dir = out_dir();
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let outcome = run_scenario(&cfg, dir.as_deref()).map_err(|e| e.to_string())?;
            summarize(&outcome);
            Ok(outcome.exit_code)
        }
        Command::Verify { config } => {
            let cfg = verification_only(&load(&config)?);
            let outcome = run_scenario(&cfg, dir.as_deref()).map_err(|e| e.to_string())?;
            summarize(&outcome);
            Ok(outcome.exit_code)
        }
        Command::Sweep { config, axis, values } => {
            let cfg = load(&config)?;
            let outcome = sweep(&cfg, axis, &values, dir.as_deref()).map_err(|e| e.to_string())?;
            for run in &outcome.runs {
                match &run.outcome {
                    Ok(o) => println!("{axis} = {}: exit {} ({} samples)", run.value, o.exit_code, o.rows.len()),
                    Err(e) => println!("{axis} = {}: error: {e}", run.value),
                }
            }
            println!("csv: {}", outcome.csv_path.display());
            Ok(outcome.exit_code)
        }
        Command::Oracle { graph, p, seed } => {
            let text = std::fs::read_to_string(&graph).map_err(|e| format!("{}: {e}", graph.display()))?;
            let g = Graph::parse(&text).map_err(|e| e.to_string())?;
            let lambda = brute_force_small_eigen(&g, p, seed).map_err(|e| e.to_string())?;
            println!("{lambda}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(scenario::EXIT_FAILED as u8)
        }
    }
}
