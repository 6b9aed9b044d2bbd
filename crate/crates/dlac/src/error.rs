use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    /// A schema or config file violation at `field`.
    #[error("{}: {field}: {reason}", path.display())]
    Schema {
        path: PathBuf,
        field: String,
        reason: String,
    },

    /// A bad command-line value.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dlac_core::Error),

    #[error("{}: {source}", path.display())]
    CoreAt {
        path: PathBuf,
        #[source]
        source: dlac_core::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn schema(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.to_path_buf(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 2 usage, 3 input or format, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            Error::Usage(_) => return 2,
            Error::Core(e) | Error::CoreAt { source: e, .. } => e,
            _ => return 3,
        };
        match core {
            dlac_core::Error::Diverged { .. } | dlac_core::Error::NonFiniteLoss => 4,
            _ => 3,
        }
    }
}
