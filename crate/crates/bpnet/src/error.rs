use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] bpnet_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A file that exists but does not parse.
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit status for the command line.
    pub fn exit_code(&self) -> i32 {
        use bpnet_core::Error as C;
        let core = match self {
            Error::Io { .. } | Error::Format { .. } => return 3,
            Error::Config(_) => return 2,
            Error::Core(c) => c,
        };
        let core = match core {
            C::Job { source, .. } => source.as_ref(),
            c => c,
        };
        match core {
            C::InvalidInput(_) | C::InfeasibleReduction { .. } => 2,
            C::Coverage { .. } => 4,
            C::Divergence { .. } => 5,
            _ => 6,
        }
    }
}
