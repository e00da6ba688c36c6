use std::path::{Path, PathBuf};

/// Malformed binary or text file contents.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u8),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("non-finite value in record {id}")]
    NonFinite { id: u64 },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("inconsistent contents: {0}")]
    Inconsistent(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

impl FormatError {
    pub fn syntax(line: usize, message: impl Into<String>) -> Self {
        FormatError::Syntax {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
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
        source: FormatError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] clfa_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn in_file(path: &Path, source: FormatError) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// The format error behind this error, if any.
    pub fn format(&self) -> Option<&FormatError> {
        match self {
            CliError::Format(e) | CliError::File { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
