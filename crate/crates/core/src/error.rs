use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("element {element} is degenerate (volume {volume:e} below threshold {threshold:e})")]
    DegenerateElement {
        element: usize,
        volume: f64,
        threshold: f64,
    },

    #[error("inadmissible parameter: entry {index} is {value} (must be positive and finite)")]
    Inadmissible { index: usize, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is rank deficient: numerical rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("sketched system is singular (non-positive pivot {pivot:e} at index {index})")]
    SketchSingular { index: usize, pivot: f64 },

    #[error("eigensolver did not converge: max residual {max_residual:e} after {iterations} iterations")]
    EigenNonConvergence { max_residual: f64, iterations: usize },

    #[error("linear solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverNonConvergence { residual: f64, iterations: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bundle format error: {0}")]
    BundleFormat(String),

    #[error("not a supported bundle: {0}")]
    BundleVersion(String),

    #[error("bundle was built for a different mesh (fingerprint mismatch)")]
    FingerprintMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of numerical routines, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::SketchSingular { .. }
                | Error::EigenNonConvergence { .. }
                | Error::SolverNonConvergence { .. }
                | Error::NotPositiveDefinite
        )
    }
}
