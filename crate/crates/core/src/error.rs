use thiserror::Error;

/// Errors raised anywhere in the flow / eigenvalue pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("non-finite value in {module}: {detail}")]
    NonFinite { module: &'static str, detail: String },

    #[error("time step {dt:e} exceeds the explicit stability limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("{what} is undefined at t = {t}: validity window ends at T' = {t_prime}")]
    Domain {
        what: &'static str,
        t: f64,
        t_prime: f64,
    },

    #[error("flow extinction in {what}: scale reaches zero at t = {t_extinct}")]
    Extinction { what: &'static str, t_extinct: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "eigensolver did not converge: best residual {best_residual:e} (lambda = {lambda}) after {iterations} iterations"
    )]
    NotConverged {
        best_residual: f64,
        lambda: f64,
        iterations: usize,
    },

    #[error("eigenpair is not certified: residual {residual:e} > tolerance {tol:e}")]
    Uncertified { residual: f64, tol: f64 },

    #[error("graph input: {0}")]
    Graph(String),

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
