use std::path::Path;

use serde::Serialize;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rcql_core::Error),
    /// A core failure attributable to one input row.
    #[error("{origin}: line {line}: {source}")]
    Row {
        origin: String,
        line: u64,
        #[source]
        source: rcql_core::Error,
    },
    #[error("{origin}: line {line}: {message}")]
    Parse { origin: String, line: u64, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {source}")]
    Json {
        origin: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json { origin: path.display().to_string(), source }
    }

    pub fn parse(origin: &str, line: u64, message: impl Into<String>) -> Self {
        CliError::Parse { origin: origin.to_string(), line, message: message.into() }
    }

    /// 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::Row { source: e, .. } if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::Row { source: e, .. } if e.is_numerical() => "numerical",
            CliError::Core(_) | CliError::Row { .. } => "validation",
            CliError::Parse { .. } => "parse",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
        }
    }

    /// The line number for row-level failures.
    pub fn line(&self) -> Option<u64> {
        match self {
            CliError::Row { line, .. } | CliError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let code = match self {
            CliError::Core(e) | CliError::Row { source: e, .. } => Some(e.code()),
            _ => None,
        };
        ErrorReport { error: self.kind(), code, message: self.to_string(), line: self.line(), exit_code: self.exit_code() }
    }
}

/// The JSON object printed on stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    /// The library error variant, when the failure came from the library.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<&'static str>,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub exit_code: i32,
}
