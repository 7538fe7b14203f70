use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// Everything except [`Error::Io`] is a validation failure of the input data
/// or options; the CLI maps the two groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("XML error at line {line}, column {column}: {message}")]
    Xml {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("apparatus entry {site}: {message}")]
    Site { site: String, message: String },

    #[error("witness {siglum}: {message}")]
    Witness { siglum: String, message: String },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("Newick parse error at byte {position}: {message}")]
    Newick { position: usize, message: String },

    #[error("invalid tree: {0}")]
    Tree(String),

    #[error("tree leaves do not match matrix taxa (only in tree: {only_tree:?}; only in matrix: {only_matrix:?})")]
    LeafMismatch {
        only_tree: Vec<String>,
        only_matrix: Vec<String>,
    },

    #[error("PHYLIP name collision: {0}")]
    NameCollision(String),

    #[error("invalid option: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn site(site: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Site {
            site: site.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 for I/O failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

/// A value together with the non-fatal warnings produced while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Warned<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Warned<T> {
    pub fn new(value: T, warnings: Vec<String>) -> Self {
        Warned { value, warnings }
    }

    /// Sends every warning to the `log` facade and returns the value.
    pub fn logged(self) -> T {
        for w in &self.warnings {
            log::warn!("{w}");
        }
        self.value
    }
}
