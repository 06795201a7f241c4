use std::fmt;
use std::path::PathBuf;

use crate::problem::{NodeId, SubdomainId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Solve pipeline stage, attached to errors raised inside `solve_dvs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Factor,
    Rhs,
    Interface,
    BackSubstitute,
    Verify,
    Direct,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Phase::Setup => "setup",
            Phase::Factor => "factor",
            Phase::Rhs => "rhs",
            Phase::Interface => "interface",
            Phase::BackSubstitute => "back-substitute",
            Phase::Verify => "verify",
            Phase::Direct => "direct",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("empty problem: {0}")]
    EmptyProblem(String),

    #[error("node {node} is not assigned to any subdomain")]
    Coverage { node: NodeId },

    #[error("index {index} out of range (limit {limit})")]
    Range { index: usize, limit: usize },

    #[error("locality violated at {} entries; first: {}", .count, fmt_pairs(.pairs))]
    Locality { count: usize, pairs: Vec<(NodeId, NodeId)> },

    #[error("primal node {node} has multiplicity 1; primal nodes must lie on the interface")]
    InvalidPrimal { node: NodeId },

    #[error("derived vector is not continuous (relative defect {defect:.3e})")]
    Continuity { defect: f64 },

    #[error("exchange is missing the contribution of subdomain {0}")]
    IncompleteExchange(SubdomainId),

    #[error("right-hand side is not in the range of the matrix (relative residual {residual:.3e})")]
    InconsistentRhs { residual: f64 },

    #[error("index split does not cover the orthogonal complement of the null space (defect {defect:.3e})")]
    InvalidSplit { defect: f64 },

    #[error("Schur complement of rank {rank} (size {size}) cannot reproduce the pseudo-inverse (defect {defect:.3e})")]
    SingularSchur { rank: usize, size: usize, defect: f64 },

    #[error("interior block of subdomain {subdomain} is singular (pivot {pivot} of {size})")]
    SingularBlock {
        subdomain: SubdomainId,
        pivot: usize,
        size: usize,
    },

    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("{phase} phase: {source}")]
    Phase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Strips phase tags and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self.root(), Error::NonConvergence { .. })
    }
}

pub(crate) trait WithPhase<T> {
    fn phase(self, phase: Phase) -> Result<T>;
}

impl<T> WithPhase<T> for Result<T> {
    fn phase(self, phase: Phase) -> Result<T> {
        self.map_err(|e| Error::Phase {
            phase,
            source: Box::new(e),
        })
    }
}

fn fmt_pairs(pairs: &[(NodeId, NodeId)]) -> String {
    pairs
        .iter()
        .map(|(p, q)| format!("({p},{q})"))
        .collect::<Vec<_>>()
        .join(" ")
}
