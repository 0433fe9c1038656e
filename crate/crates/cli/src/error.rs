use std::path::PathBuf;

use bsde_core::BsdeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("{field}: {message}")]
    Field { field: &'static str, message: String },

    #[error("{field}: {source}")]
    Core {
        field: &'static str,
        #[source]
        source: BsdeError,
    },

    #[error(transparent)]
    Solver(#[from] BsdeError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot encode report: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn field(field: &'static str, message: impl Into<String>) -> Self {
        CliError::Field {
            field,
            message: message.into(),
        }
    }

    pub fn core(field: &'static str, source: BsdeError) -> Self {
        CliError::Core { field, source }
    }
}
