use thiserror::Error;

use crate::equilibrate::EquilState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad dimensions: {0}")]
    BadDims(String),

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("column {0} has (near) zero l1 norm")]
    ZeroColumn(usize),

    #[error("matrix does not have full column rank")]
    RankDeficient,

    #[error("simplex exceeded its pivot budget after {0} pivots")]
    NoConvergence(usize),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("weight or noise support too large for exact enumeration: {0}")]
    SupportTooLarge(String),

    #[error("lemma hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("invalid parameters: {0}")]
    BadParams(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("equilibration exceeded {passes} passes with {in_set} of {n} columns admitted")]
    MaxOuterExceeded {
        passes: usize,
        in_set: usize,
        n: usize,
        state: Box<EquilState>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn at(self, iteration: usize) -> Error {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }

    /// The underlying error with any iteration context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn iteration(&self) -> Option<usize> {
        match self {
            Error::AtIteration { iteration, .. } => Some(*iteration),
            _ => None,
        }
    }
}
