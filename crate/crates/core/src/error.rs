use thiserror::Error;

/// Errors raised across the simulator, optimizer and scenario runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("point ({x:.4}, {y:.4}) lies outside the heightmap extent")]
    OutOfBounds { x: f64, y: f64 },

    #[error("simulation diverged at t = {time:.4} s: {quantity} is not finite")]
    Divergence { time: f64, quantity: String },

    #[error("infeasible problem; binding constraint family: {family}")]
    Infeasible { family: String },

    #[error("no convergence after {iterations} iterations (max residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Usage(String),

    #[error("{}", config_message(*line, field, message))]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Line 0 means the problem is not tied to one line of the file.
fn config_message(line: usize, field: &str, message: &str) -> String {
    if line == 0 {
        format!("config: field `{field}`: {message}")
    } else {
        format!("config line {line}: field `{field}`: {message}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
