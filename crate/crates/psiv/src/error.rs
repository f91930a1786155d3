//! Errors of the command-line layer and their exit codes.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("file has no data rows")]
    EmptyFile,

    #[error("quantile bin {bin} of {k} for `{column}` is empty (too many ties)")]
    EmptyBin { column: String, bin: usize, k: usize },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),

    #[error(transparent)]
    Core(#[from] psiv_core::Error),
}

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Process exit code for bad input: files, schemas, configs, arguments.
pub const EXIT_INPUT: i32 = 1;
/// Process exit code when the inputs are valid but estimation is infeasible.
pub const EXIT_INFEASIBLE: i32 = 2;

impl Error {
    pub fn exit_code(&self) -> i32 {
        use psiv_core::Error as C;
        match self {
            Error::Core(
                C::ZeroCompliance
                | C::AllStrataDropped
                | C::TooSmall { .. }
                | C::TooFewUnits { .. }
                | C::DegenerateVariance { .. }
                | C::NoCompliersInArm(_)
                | C::RankDeficient
                | C::NoCompliers
                | C::Infeasible(_)
                | C::InfeasibleCompliance { .. },
            ) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        }
    }
}
