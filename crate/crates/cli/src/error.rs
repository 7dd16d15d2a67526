//! Exit-code discipline: 2 for configuration/schema problems (with the
//! offending field path), 3 for numerical failures (with the module
//! diagnostic). A machine-readable record goes to stderr either way.

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn schema(path: &str, message: &str) -> Self {
        CliError::Schema {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// Model-construction errors surface as schema problems: they are
    /// defects of the input document.
    pub fn schema_from(e: higs_control::Error) -> Self {
        CliError::Schema {
            path: String::new(),
            message: e.to_string(),
        }
    }

    pub fn numerical(e: higs_control::Error) -> Self {
        CliError::Numerical(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            exit_code: self.exit_code(),
            kind: match self {
                CliError::Schema { .. } => "schema",
                CliError::Numerical(_) => "numerical",
                CliError::Io(_) => "io",
            },
            path: match self {
                CliError::Schema { path, .. } if !path.is_empty() => Some(path.clone()),
                _ => None,
            },
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub exit_code: i32,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}
