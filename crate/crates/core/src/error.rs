use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}, line {line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate calendar age {0} in calibration curve")]
    DuplicateCalAge(f64),

    #[error("calibration curve needs at least 2 records, found {0}")]
    TooFewRecords(usize),

    #[error("calendar age {theta} outside calibration curve range [{min}, {max}]")]
    OutOfCurveRange { theta: f64, min: f64, max: f64 },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    /// Every grid weight underflowed: the grid does not cover the determination
    /// (or the current rate is zero wherever it has mass).
    #[error("determination {id} has no probability mass on the calendar grid")]
    NoMass { id: String },

    #[error("no posterior realisations with {k} changepoints")]
    NoRealisations { k: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported samples file version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
