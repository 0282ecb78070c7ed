use std::path::PathBuf;

use crate::irb::IrbRunState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed for sample `{sample_id}`: {reason}")]
    Validation { sample_id: String, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("insufficient images for class {class_id}: need {needed}, have {available} (short by {})", needed - available)]
    Capacity {
        class_id: u8,
        needed: usize,
        available: usize,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("trainset build error: {0}")]
    Build(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f32 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("report error: {0}")]
    Report(String),

    #[error("IRB loop failed at iteration {iteration}: {source}")]
    Loop {
        iteration: usize,
        partial: Box<IrbRunState>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Whether this error stems from a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
