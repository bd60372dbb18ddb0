//! Eviction-set catalogue, one set per line:
//!
//! ```text
//! # llc-lab catalog v1
//! # num_sets 8192 sets 8192 coverage 1.000000
//! <offset> <witness> <status> <member> <member> ...
//! ```
//!
//! `offset` is the line index within the page (0..64), addresses are
//! `0x`-prefixed hex virtual addresses and `status` is `profiled` or
//! `verified`. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use llc_lab_core::evset::{EvictionSet, EvictionSetCatalog, SetStatus};
use llc_lab_core::memsim::VirtAddr;

use super::{fields, parse_err, parse_hex};
use crate::error::Result;

pub const HEADER: &str = "# llc-lab catalog v1";

pub fn write_catalog(cat: &EvictionSetCatalog) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "# num_sets {} sets {} coverage {:.6}", cat.num_sets, cat.len(), cat.coverage()).unwrap();
    for s in &cat.sets {
        let status = match s.status {
            SetStatus::Profiled => "profiled",
            SetStatus::Verified => "verified",
        };
        write!(out, "{} {:#x} {status}", s.offset_index, s.witness.0).unwrap();
        for m in &s.members {
            write!(out, " {:#x}", m.0).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses the sets of a catalogue file. `path` is only used in messages.
pub fn parse_catalog(text: &str, path: &Path) -> Result<Vec<EvictionSet>> {
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = fields(line);
        let offset_index = f
            .next()
            .and_then(|s| s.parse::<u8>().ok())
            .filter(|&o| o < 64)
            .ok_or_else(|| parse_err(path, n, "bad offset index"))?;
        let witness = f.next().and_then(parse_hex).ok_or_else(|| parse_err(path, n, "bad witness"))?;
        let status = match f.next() {
            Some("profiled") => SetStatus::Profiled,
            Some("verified") => SetStatus::Verified,
            _ => return Err(parse_err(path, n, "bad status")),
        };
        let members = f
            .map(|s| parse_hex(s).map(VirtAddr).ok_or_else(|| parse_err(path, n, format!("bad member {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() {
            return Err(parse_err(path, n, "set has no members"));
        }
        sets.push(EvictionSet { members, witness: VirtAddr(witness), offset_index, status });
    }
    Ok(sets)
}

/// Coverage curve as `ops,coverage` CSV.
pub fn write_coverage_csv(cat: &EvictionSetCatalog) -> String {
    let mut out = String::from("ops,coverage\n");
    for p in &cat.curve {
        writeln!(out, "{},{:.6}", p.ops, p.coverage).unwrap();
    }
    out
}
