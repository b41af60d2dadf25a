use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case syntax error at line {line}, column {column}: {message}")]
    CaseSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("zero-impedance branch {from}-{to}")]
    ZeroImpedance { from: u32, to: u32 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("power-flow Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("gain matrix is singular; the plan is unobservable for this measurement set")]
    Unobservable,

    #[error("measurement vector has {missing} masked entries; substitute pseudo-measurements first")]
    MaskedMeasurements { missing: usize },

    #[error("invalid measurement plan: {0}")]
    InvalidPlan(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{skipped} of {total} hours did not converge (limit is 5%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attribute an error to a pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
