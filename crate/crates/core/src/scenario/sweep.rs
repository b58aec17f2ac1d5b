//! One-parameter sweeps, run in parallel and aggregated in value order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scenario::config::{GeometryConfig, ScenarioConfig};
use crate::scenario::record::{csv_header, CsvSink};
use crate::scenario::run::{resolve_output, run_scenario, RunOutcome, RunStatus, EXIT_FAILED};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Rho,
    P,
    /// Leading amplitude of the `u0` expression.
    Amplitude,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Rho => "rho",
            SweepAxis::P => "p",
            SweepAxis::Amplitude => "amplitude",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepAxis::Rho),
            "p" => Ok(SweepAxis::P),
            "amplitude" => Ok(SweepAxis::Amplitude),
            _ => Err(Error::InvalidParameter(format!("unknown sweep axis '{s}' (rho, p, amplitude)"))),
        }
    }
}

/// Per-value result of a sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub value: f64,
    pub outcome: Result<RunOutcome>,
}

impl SweepRun {
    pub fn exit_code(&self) -> i32 {
        self.outcome.as_ref().map_or(EXIT_FAILED, |o| o.exit_code)
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub runs: Vec<SweepRun>,
    pub csv_path: PathBuf,
    /// Worst exit code over all runs.
    pub exit_code: i32,
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

/// Configuration for one point of the sweep, with its own output files.
pub fn sweep_point(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Rho => c.flow.rho = value,
        SweepAxis::P => c.flow.p = value,
        SweepAxis::Amplitude => match &mut c.geometry {
            GeometryConfig::Torus { u0, .. } => *u0 = u0.with_amplitude(value)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "amplitude sweeps need a torus, not {}",
                    other.kind()
                )))
            }
        },
    }
    let tag = format!("{axis}_{value}");
    c.output.csv_path = suffixed(&cfg.output.csv_path, &tag);
    c.output.report_path = suffixed(&cfg.output.report_path, &tag);
    c.validate()?;
    Ok(c)
}

/// Runs every value and writes `<csv stem>_sweep_<axis>.csv`, one block of
/// rows per value in the order given.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64], out_dir: Option<&Path>) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let runs: Vec<SweepRun> = values
        .par_iter()
        .map(|&value| SweepRun {
            value,
            outcome: sweep_point(cfg, axis, value).and_then(|c| run_scenario(&c, out_dir)),
        })
        .collect();

    let csv_path = resolve_output(&suffixed(&cfg.output.csv_path, &format!("sweep_{axis}")), out_dir);
    let axis_name = axis.to_string();
    let mut sink = CsvSink::create(&csv_path, &["axis", "value", "exit_code", "status"])?;
    for run in &runs {
        let lead = |status: String| vec![axis_name.clone(), run.value.to_string(), run.exit_code().to_string(), status];
        match &run.outcome {
            Ok(o) => {
                let status = match &o.status {
                    RunStatus::Completed => "completed".to_string(),
                    RunStatus::Truncated { t_prime, .. } => format!("truncated at {t_prime}"),
                    RunStatus::Failed { module, .. } => format!("failed in {module}"),
                };
                for row in &o.rows {
                    sink.write(&lead(status.clone()), row)?;
                }
            }
            Err(e) => {
                let mut blank = vec![String::new(); csv_header().len()];
                let mut row = lead(format!("error: {e}"));
                row.append(&mut blank);
                sink.write_raw(&row)?;
            }
        }
    }
    let exit_code = runs.iter().map(SweepRun::exit_code).max().unwrap_or(0);
    Ok(SweepOutcome {
        axis,
        runs,
        csv_path,
        exit_code,
    })
}
