//! Experiment harness: configuration, replication and timing studies, the
//! sequential error-accumulation trace, and CSV output.

pub mod config;
pub mod record;
pub mod study;

pub use config::{emit_config, load_config, parse_config, ExperimentConfig, Method};
pub use record::{emit_csv, format_sci, BenchRecord, Status, Summary};
pub use study::{run_error_accumulation_trace, run_replication_study, run_timing_study};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] slstd::Error),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

impl BenchError {
    /// Process exit code: 1 for configuration problems, 3 for cap hits, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Core(slstd::Error::Config(_)) => 1,
            BenchError::Core(slstd::Error::MemoryCap { .. } | slstd::Error::TimeCap { .. }) => 3,
            _ => 2,
        }
    }
}
