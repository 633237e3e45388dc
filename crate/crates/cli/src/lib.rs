//! Command implementations behind the `glasspipe` binary: training runs with
//! checkpoints and logs, held-out evaluation, pipeline inspection, charts
//! and frame dumps.

pub mod config;
pub mod eval;
pub mod inspect;
pub mod plot;
pub mod render;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] glasspipe::Error),

    #[error("{path}: {source}")]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("config {path}: {message}")]
    Config { path: std::path::PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("log file: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("chart: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub(crate) fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let wrap = |source| Error::File {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, contents).map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}
