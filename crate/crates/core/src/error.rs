use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("normal matrix is singular (pivot {pivot:.3e}); use a positive ridge")]
    Singular { pivot: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown task id `{id}`; valid ids: {valid}")]
    UnknownTask { id: String, valid: String },

    #[error("statistic `{0}` is undefined for fewer than two tasks")]
    UndefinedStatistic(&'static str),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing dependency: {0}")]
    MissingArtifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by user input (bad config, missing artifacts)
    /// rather than runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::MissingArtifact(_)
                | Error::UnknownTask { .. }
                | Error::Parameter(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
