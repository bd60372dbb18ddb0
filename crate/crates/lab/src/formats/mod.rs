//! Text and image artifacts.
//!
//! All writers are deterministic functions of their input: no timestamps,
//! no hash-map iteration order, fixed float formatting.

pub mod catalog;
pub mod memorygram;
pub mod model;

use std::path::Path;

use crate::error::LabError;

/// Splits off the first token of a line, for the line-oriented parsers.
pub(crate) fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split_ascii_whitespace()
}

pub(crate) fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> LabError {
    LabError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

pub(crate) fn parse_hex(s: &str) -> Option<u64> {
    u64::from_str_radix(s.strip_prefix("0x")?, 16).ok()
}
