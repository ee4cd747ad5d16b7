use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed IDX file. `offset` is the byte where the bad field starts.
    #[error("idx parse error in {field} at byte {offset}: {reason}")]
    Idx {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("config error: {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] ufl_core::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
