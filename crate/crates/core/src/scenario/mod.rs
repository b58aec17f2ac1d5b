//! Scenario files, runs, sweeps and their CSV/report output.

pub mod config;
pub mod expr;
pub mod record;
pub mod run;
pub mod sweep;

pub use config::{parse_config, GeometryConfig, ScenarioConfig};
pub use expr::Expr;
pub use record::{csv_header, read_csv, RunRecord, CSV_SCHEMA};
pub use run::{run_scenario, verification_only, RunOutcome, RunStatus, EXIT_FAILED, EXIT_OK, EXIT_VIOLATED};
pub use sweep::{sweep, SweepAxis, SweepOutcome};
