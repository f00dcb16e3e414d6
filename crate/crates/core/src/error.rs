use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dataset directory or artifact does not follow the expected layout.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A record disagrees with its manifest.
    #[error("validation error in trajectory `{trajectory}`, field `{field}`: {detail}")]
    Validation { trajectory: String, field: String, detail: String },

    #[error(
        "truncated record {path} (trajectory {trajectory}) at byte offset {offset}: expected {expected} more bytes"
    )]
    Truncated { path: PathBuf, trajectory: String, offset: u64, expected: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("incompatible datasets: {0}")]
    Incompatible(String),

    #[error("no usable data: {0}")]
    NoData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub(crate) fn validation(
        trajectory: impl Into<String>,
        field: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Validation { trajectory: trajectory.into(), field: field.into(), detail: detail.into() }
    }

    /// Wraps an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 for configuration and argument problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Format { .. }
            | Error::Validation { .. }
            | Error::Truncated { .. }
            | Error::Io { .. }
            | Error::Incompatible(_)
            | Error::NoData(_)
            | Error::Json { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
