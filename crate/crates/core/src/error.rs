use std::path::PathBuf;

use crate::fem::SolverReport;
use crate::topo::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PGM parse error: unexpected token `{token}` while reading {field}")]
    Parse { field: &'static str, token: String },

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("grid size error: {0}")]
    Size(String),

    #[error("point ({x}, {y}) lies outside the domain [0, {width}] x [0, {height}]")]
    Domain {
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },

    #[error("field dimensions {got:?} do not match grid dimensions {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("assembly error: cell {cell} has non-positive coefficient {value}")]
    Assembly { cell: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("duplicate ball center ({x}, {y})")]
    DuplicateCenter { x: f64, y: f64 },

    #[error(
        "linear solver failed during {stage}: {} iterations, relative residual {:.3e}",
        report.iterations,
        report.final_residual
    )]
    Solver {
        stage: String,
        report: SolverReport,
        /// Iterations completed before the failure, when the failure happened inside a run.
        partial_trace: Option<Box<RunTrace>>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn solver(stage: impl Into<String>, report: SolverReport) -> Self {
        Error::Solver {
            stage: stage.into(),
            report,
            partial_trace: None,
        }
    }
}
