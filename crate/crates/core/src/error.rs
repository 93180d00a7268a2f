use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blow-up at t = {time} s: {what}")]
    Blowup { time: f64, what: String },

    #[error("covariance system is not positive definite (minimum pivot {min_pivot:e})")]
    NotPositiveDefinite { min_pivot: f64 },

    #[error("ensemble collapse: {0}; increase relaxation or inflation")]
    EnsembleCollapse(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("network: {0}")]
    Network(String),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: bad magic {found:?}, expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{}: format version {found}, expected {expected}", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{}: truncated file ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("{}: checksum mismatch (stored {stored:016x}, computed {computed:016x})", path.display())]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn at_cycle(self, cycle: usize) -> Self {
        match self {
            e @ Error::Cycle { .. } => e,
            e => Error::Cycle {
                cycle,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping cycle context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cycle { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Blowup { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::EnsembleCollapse(_)
                | Error::Statistics(_)
                | Error::Network(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self.root(),
            Error::BadMagic { .. }
                | Error::Version { .. }
                | Error::Truncated { .. }
                | Error::Checksum { .. }
                | Error::Format { .. }
                | Error::Io { .. }
        )
    }
}
