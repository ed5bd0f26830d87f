use std::fmt;

use thiserror::Error;

use crate::network::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Solver,
    Oracle,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("singular system matrix in {context} (pivot {pivot:.3e})")]
    Singular { context: &'static str, pivot: f64 },

    #[error("infeasible angle recovery at bus {bus}: |sin| = {value:.6}")]
    AngleRecovery { bus: usize, value: f64 },

    #[error("solver variables inconsistent with the branch-flow equations: max residual {max_residual:.3e}")]
    Inconsistent { max_residual: f64 },

    #[error("nonphysical solution at bus {bus}: W = {w:.6}")]
    Nonphysical { bus: usize, w: f64 },

    #[error("convexity condition unsatisfied: {0}")]
    Convexity(String),

    #[error("solver: {0}")]
    Solver(#[from] crate::qcqp::SolverError),

    #[error("congestion detected on {branches} branch(es); marginal-loss prices assume an uncongested network")]
    Congestion { branches: usize },

    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e})")]
    Divergence { iterations: usize, mismatch: f64 },

    #[error("singular power-flow Jacobian")]
    SingularJacobian,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::InvalidNetwork(_)
            | Error::Scenario(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Divergence { .. } | Error::SingularJacobian => ErrorKind::Oracle,
            _ => ErrorKind::Solver,
        }
    }

    pub(crate) fn parse(line: usize, message: impl fmt::Display) -> Self {
        Error::Parse { line, message: message.to_string() }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
