//! Memorygram exports.
//!
//! CSV: a header `set,0,1,...` naming the slots, then one row per monitored
//! set starting with its catalogue index. PGM: binary greymap (P5), one
//! pixel row per set, each row scaled to 0..=255 on its own min/max so
//! that darker means faster. A row with a single value is black.

use std::fmt::Write as _;

use llc_lab_core::probe::Memorygram;

pub fn write_csv(g: &Memorygram) -> String {
    let mut out = String::with_capacity(g.rows * g.cols * 5 + 16);
    out.push_str("set");
    for c in 0..g.cols {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    for r in 0..g.rows {
        write!(out, "{}", g.set_labels[r]).unwrap();
        for &v in g.row(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Row-normalised 8-bit intensities, row-major.
pub fn normalise_rows(g: &Memorygram) -> Vec<u8> {
    let mut px = Vec::with_capacity(g.rows * g.cols);
    for r in 0..g.rows {
        let row = g.row(r);
        let lo = row.iter().copied().min().unwrap_or(0);
        let hi = row.iter().copied().max().unwrap_or(0);
        let span = hi - lo;
        px.extend(row.iter().map(|&v| ((v - lo) * 255).checked_div(span).unwrap_or(0) as u8));
    }
    px
}

pub fn write_pgm(g: &Memorygram) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.cols, g.rows).into_bytes();
    out.extend(normalise_rows(g));
    out
}

/// Width, height and pixels of a P5 image with maxval 255.
pub fn read_pgm(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut pos = 0;
    let mut token = || -> Option<&str> {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        std::str::from_utf8(&bytes[start..pos]).ok()
    };
    if token()? != "P5" {
        return None;
    }
    let w: usize = token()?.parse().ok()?;
    let h: usize = token()?.parse().ok()?;
    if token()? != "255" {
        return None;
    }
    let px = bytes.get(pos + 1..)?;
    (px.len() == w * h).then_some((w, h, px))
}
