use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state out of range: {0}")]
    StateOutOfRange(String),

    #[error("invalid action {0}; actions are 1, 2, 3")]
    InvalidAction(u8),

    #[error("no transition out of terminal state {0:?}")]
    TerminalState(Vec<u32>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver diverged at pass {pass}, step {step}: {reason}")]
    Diverged {
        pass: usize,
        step: usize,
        reason: String,
    },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("memory cap exceeded: need {needed} bytes, cap {cap} bytes")]
    MemoryCap { needed: u64, cap: u64 },

    #[error("time cap exceeded after {elapsed_s:.1} s (cap {cap_s} s)")]
    TimeCap { elapsed_s: f64, cap_s: f64 },

    #[error("record {record} is inconsistent with the transition rule: {reason}")]
    InconsistentRecord { record: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
