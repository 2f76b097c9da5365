use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("id count mismatch: {n_ids} ids for {n_rows} rows")]
    IdCountMismatch { n_ids: usize, n_rows: usize },

    #[error("invalid lexicon: {0}")]
    Lexicon(String),

    #[error("countries missing from lexicon: {}", .0.join(", "))]
    MissingCountries(Vec<String>),

    #[error("unknown country code {0}")]
    UnknownCountry(String),

    #[error("infeasible split; deficient countries: {}", .0.join(", "))]
    InfeasibleSplit(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: total={total}, country={country}, attn={attn}")]
    Diverged {
        epoch: usize,
        batch: usize,
        total: f64,
        country: f64,
        attn: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
