use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("maze line {line} has width {found}, expected {expected}")]
    RaggedMaze {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("illegal maze character {ch:?} at row {row}, column {col}")]
    IllegalMazeChar { ch: char, row: usize, col: usize },
    #[error("maze has no free cells")]
    NoFreeCells,
    #[error("state id {0} out of range")]
    InvalidState(usize),
    #[error("discount factor {0} must lie strictly between 0 and 1")]
    InvalidGamma(f64),
    #[error("distance table has nonzero diagonal entry {value} at state {state}")]
    NonzeroDiagonal { state: usize, value: f64 },
    #[error("distance table has invalid entry {value} at ({from}, {to})")]
    InvalidDistance { from: usize, to: usize, value: f64 },
    #[error("table sizes disagree: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("goal {goal} is unreachable from state {state}")]
    UnreachableGoal { state: usize, goal: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no maze pair satisfies the adversarial construction for horizon {0}")]
    NoAdversarialPair(u32),
    #[error("no start-goal pairs at distance >= {0}")]
    NoDistantPairs(f64),
    #[error("success rate at c0 = {0} is zero")]
    ZeroBaseSuccess(f64),
    #[error("empty dataset or batch")]
    Empty,
    #[error("distribution support of size {size} exceeds cap {cap}")]
    SupportTooLarge { size: usize, cap: usize },
    #[error("transport cost table is not a certified quasimetric")]
    UncertifiedCost,
    #[error("distribution is invalid: {0}")]
    InvalidDistribution(String),
    #[error("no finite-cost coupling exists between the distributions")]
    InfiniteTransport,
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, detail: impl ToString) -> Self {
        Error::Parse {
            what,
            detail: detail.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::RaggedMaze { .. }
                | Error::IllegalMazeChar { .. }
                | Error::NoFreeCells
                | Error::InvalidGamma(_)
                | Error::InvalidArgument(_)
                | Error::Parse { .. }
        )
    }
}
