use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model or experiment parameters (malformed knot tables,
    /// non-co-prime counter increments, odd device counts for the
    /// differential architecture, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A read was requested at a time before the device was last programmed.
    #[error("time-ordering error: read at t={t_now} precedes last programming at t={t_last}")]
    TimeOrder { t_now: f64, t_last: f64 },

    /// An operation that only exists for one architecture was invoked on the
    /// other (e.g. refresh on a non-differential synapse).
    #[error("architecture error: {0}")]
    Architecture(String),

    /// A caller-supplied numeric input was unusable (NaN/infinite delta_w).
    #[error("input error: {0}")]
    Input(String),

    /// The fitted response table failed to reproduce the target trajectory.
    #[error(
        "calibration error: normalized RMS residual {nrmse:.5} exceeds {limit} \
         (worst pulse {worst_pulse}: target {target:.4} uS, fitted {fitted:.4} uS)"
    )]
    Calibration {
        nrmse: f64,
        limit: f64,
        worst_pulse: usize,
        target: f64,
        fitted: f64,
    },

    /// A dataset or config file could not be ingested. Always names the file.
    #[error("{}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
