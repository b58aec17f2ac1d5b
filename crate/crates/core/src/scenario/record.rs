//! Run rows and the CSV schema.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::monotone::QuantityId;

/// Leading comment line of every run CSV.
pub const CSV_SCHEMA: &str = "# rbflow-run-csv v1";

/// One sample of a run. Cells without a value stay `None` and are written
/// empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub t: f64,
    pub lambda: f64,
    pub residual: Option<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    /// Quantity values, indexed like [`QuantityId::ALL`].
    pub quantities: [Option<f64>; 8],
    /// Hypothesis margins at this sample, indexed like [`QuantityId::ALL`].
    pub margins: [Option<f64>; 8],
    /// Rayleigh quotient of the transported initial eigenfunction.
    pub lambda_tf: Option<f64>,
    pub fd_dlambda: Option<f64>,
    pub rhs_e2: Option<f64>,
    pub rel_error: Option<f64>,
    pub el1_err: Option<f64>,
    pub el3_err: Option<f64>,
}

pub fn quantity_index(id: QuantityId) -> usize {
    QuantityId::ALL.iter().position(|q| *q == id).expect("catalog id")
}

/// Column names, in order.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "lambda", "residual", "R_min", "R_max", "sigma", "gamma"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(QuantityId::ALL.iter().map(|id| format!("q_{id}")));
    h.extend(QuantityId::ALL.iter().map(|id| format!("h_{id}")));
    h.extend(
        ["lambda_tf", "fd_dlambda", "rhs_e2", "rel_error", "el1_err", "el3_err"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunRecord {
    pub fn cells(&self) -> Vec<String> {
        let mut c = vec![
            self.t.to_string(),
            self.lambda.to_string(),
            cell(self.residual),
            self.r_min.to_string(),
            self.r_max.to_string(),
            cell(self.sigma),
            cell(self.gamma),
        ];
        c.extend(self.quantities.iter().map(|v| cell(*v)));
        c.extend(self.margins.iter().map(|v| cell(*v)));
        c.extend([self.lambda_tf, self.fd_dlambda, self.rhs_e2, self.rel_error, self.el1_err, self.el3_err].map(cell));
        c
    }
}

/// CSV sink flushed after every row, so a failed run leaves a readable
/// prefix.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, extra_leading: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{CSV_SCHEMA}")?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header: Vec<String> = extra_leading.iter().map(|s| s.to_string()).collect();
        header.extend(csv_header());
        writer.write_record(&header)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, leading: &[String], record: &RunRecord) -> Result<()> {
        let mut row = leading.to_vec();
        row.extend(record.cells());
        self.write_raw(&row)
    }

    pub fn write_raw(&mut self, row: &[String]) -> Result<()> {
        self.writer.write_record(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a run CSV back, skipping the schema line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}
