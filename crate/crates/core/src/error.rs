use core::fmt;

use crate::memsim::{ConfigError, MemError};

/// Errors surfaced by the laboratory's operations.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    Config(ConfigError),
    Memory(MemError),
    /// The hit and miss distributions overlap too much to pick a threshold.
    CalibrationFailed {
        misclassification: f64,
    },
    /// One probe round did not fit in its time slot.
    SlotOverrun {
        slot: usize,
        overrun_ns: u64,
    },
    CarrierNotFound {
        scanned: usize,
    },
    SyncLost {
        period: u64,
    },
    DegenerateClustering {
        clusters: usize,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    InvalidArgument(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(e) => write!(f, "invalid configuration: {e}"),
            Error::Memory(e) => write!(f, "memory error: {e}"),
            Error::CalibrationFailed { misclassification } => {
                write!(f, "calibration failed: threshold misclassifies {:.1}% of samples", misclassification * 100.0)
            }
            Error::SlotOverrun { slot, overrun_ns } => {
                write!(f, "probe round overran slot {slot} by {overrun_ns} ns")
            }
            Error::CarrierNotFound { scanned } => {
                write!(f, "no carrier frame found after scanning {scanned} frames")
            }
            Error::SyncLost { period } => write!(f, "preamble re-check failed at period {period}"),
            Error::DegenerateClustering { clusters } => {
                write!(f, "k-means produced an empty cluster (k = {clusters})")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
        }
    }
}

impl core::error::Error for Error {}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e)
    }
}

impl From<MemError> for Error {
    fn from(e: MemError) -> Self {
        Error::Memory(e)
    }
}
