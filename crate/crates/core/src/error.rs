use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("user {user} has conflicting countries {first} and {second}")]
    ConflictingCountry {
        user: String,
        first: String,
        second: String,
    },
    #[error("track {track} is attributed to both {first} and {second}")]
    ConflictingArtist {
        track: String,
        first: String,
        second: String,
    },
    #[error("artist {artist} has conflicting {source_name} labels {first} and {second}")]
    ConflictingLabel {
        artist: String,
        source_name: &'static str,
        first: String,
        second: String,
    },
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown track {0}")]
    UnknownTrack(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("catalog exhausted: {requested} recommendations requested but only {available} unseen tracks")]
    CatalogExhausted { requested: usize, available: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::File { .. }) => e,
            e => Error::File {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }
}
