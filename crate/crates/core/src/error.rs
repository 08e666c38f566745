//! Crate-level error aggregation and process exit codes:
//! 0 success, 2 configuration, 3 numerical failure, 4 non-convergence.

use thiserror::Error;

use crate::config::ConfigError;
use crate::diagnostics::DiagnosticsError;
use crate::kernel::KernelError;
use crate::mc::McError;
use crate::mesh::MeshError;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("asymptotic rung epsilon = {epsilon}: {source}")]
    Rung {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mesh(_) => 2,
            Error::Kernel(k) => match k {
                KernelError::Quadrature { .. } => 3,
                _ => 2,
            },
            Error::Solver(s) => match s {
                SolverError::NotSteady { .. } => 4,
                _ => 3,
            },
            Error::Diagnostics(d) => match d {
                DiagnosticsError::IncompatibleDomains(_) => 2,
                _ => 3,
            },
            Error::Mc(m) => match m {
                McError::GridMismatch(_) => 3,
                _ => 2,
            },
            Error::Io(_) => 1,
            Error::Rung { source, .. } => source.exit_code(),
        }
    }
}
