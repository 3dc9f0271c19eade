use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure of a command, classified by the exit code it maps to.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    /// Bad flags or configuration values.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unusable input data.
    #[error("{0}")]
    Data(String),
    /// The numerics failed on otherwise valid input.
    #[error("{0}")]
    Numeric(String),
    /// An output file could not be written.
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Output(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Output(_) => "output",
        }
    }

    /// One-line JSON object describing the error, for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            exit_code: i32,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message: self.to_string(),
            },
        })
        .expect("error objects serialize")
    }

    /// Wraps a core error raised while validating configuration.
    pub fn config(err: repdiv_core::Error) -> Self {
        CliError::Usage(err.to_string())
    }
}

impl From<repdiv_core::Error> for CliError {
    fn from(err: repdiv_core::Error) -> Self {
        if err.is_data_error() {
            CliError::Data(err.to_string())
        } else {
            CliError::Numeric(err.to_string())
        }
    }
}
