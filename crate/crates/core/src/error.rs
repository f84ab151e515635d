use std::fmt;

use thiserror::Error;

/// Pipeline stage, attached to errors raised inside the joint and global reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Decomposition,
    BuildZ,
    ConstraintSpace,
    GammaTilde,
    LogBetaGradient,
    Integration,
    Poisson,
    Curl,
    Coefficients,
    Assembly,
    GlobalSolve,
    Recovery,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Decomposition => "decomposition coefficients",
            Stage::BuildZ => "Z matrices",
            Stage::ConstraintSpace => "constraint space",
            Stage::GammaTilde => "anisotropic structure",
            Stage::LogBetaGradient => "log-beta gradient",
            Stage::Integration => "path integration",
            Stage::Poisson => "normal-equation solve",
            Stage::Curl => "curl of inverse tensor",
            Stage::Coefficients => "coupling coefficients",
            Stage::Assembly => "system assembly",
            Stage::GlobalSolve => "global solve",
            Stage::Recovery => "tensor recovery",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("{what} is singular at node {node} (|det| = {det:e})")]
    Singular {
        what: &'static str,
        node: usize,
        det: f64,
    },

    #[error("{what} is not positive definite at node {node} (min eigenvalue {min_eig:e})")]
    NotSpd {
        what: &'static str,
        node: usize,
        min_eig: f64,
    },

    #[error("{hypothesis} fails at node {node}: value {value:e} below threshold {threshold:e}")]
    Hypothesis {
        hypothesis: &'static str,
        node: usize,
        value: f64,
        threshold: f64,
    },

    #[error("need at least {needed} solutions, got {got}")]
    InsufficientSolutions { needed: usize, got: usize },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("integration segment from node {from} to node {to} leaves the grid")]
    SegmentOutside { from: usize, to: usize },

    #[error("push-forward image does not cover {uncovered} of {total} target nodes")]
    Uncovered { uncovered: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_hypothesis_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::Hypothesis { .. }
                | Error::Singular { .. }
                | Error::NotSpd { .. }
                | Error::InsufficientSolutions { .. }
        )
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(self.root(), Error::Solver { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
