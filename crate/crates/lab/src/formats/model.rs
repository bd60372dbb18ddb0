//! Activity model text format:
//!
//! ```text
//! # llc-lab model v1
//! name network
//! thres 985.000000
//! k 2
//! sets 0 1 2 ...
//! focus 10 11 ...
//! weights 0.000000 31.700000
//! centroid 960.000000 960.000000 ...
//! centroid ...
//! ```
//!
//! `sets` lists the catalogue index of each dimension, `focus` the
//! dimensions used for distances (empty line content means all),
//! `weights` the Hamming-weight centre of each cluster and each `centroid`
//! line one cluster's mean latency vector, in label order.

use std::fmt::Write as _;
use std::path::Path;

use llc_lab_core::classify::ActivityModel;

use super::{fields, parse_err};
use crate::error::Result;

pub const HEADER: &str = "# llc-lab model v1";

fn floats(out: &mut String, key: &str, v: &[f64]) {
    out.push_str(key);
    for x in v {
        write!(out, " {x:.6}").unwrap();
    }
    out.push('\n');
}

fn ints(out: &mut String, key: &str, v: &[usize]) {
    out.push_str(key);
    for x in v {
        write!(out, " {x}").unwrap();
    }
    out.push('\n');
}

pub fn write_model(name: &str, m: &ActivityModel) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}\nname {name}\nthres {:.6}\nk {}", m.thres, m.k()).unwrap();
    ints(&mut out, "sets", &m.sets);
    ints(&mut out, "focus", &m.focus);
    floats(&mut out, "weights", &m.weight_centres);
    for c in &m.centroids {
        floats(&mut out, "centroid", c);
    }
    out
}

/// Returns the model's name and the model.
pub fn parse_model(text: &str, path: &Path) -> Result<(String, ActivityModel)> {
    let mut name = None;
    let mut thres = None;
    let mut k = None;
    let mut sets = None;
    let mut focus = Vec::new();
    let mut weights = None;
    let mut centroids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let mut f = fields(line);
        let Some(key) = f.next() else { continue };
        if key.starts_with('#') {
            continue;
        }
        let rest: Vec<&str> = f.collect();
        let nums = |kind: &str| -> Result<Vec<f64>> {
            rest.iter()
                .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| parse_err(path, n, format!("bad {kind} value")))
        };
        let idx = |kind: &str| -> Result<Vec<usize>> {
            rest.iter()
                .map(|s| s.parse::<usize>().ok())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| parse_err(path, n, format!("bad {kind} index")))
        };
        match key {
            "name" => name = Some(rest.join(" ")),
            "thres" => thres = nums("thres")?.first().copied(),
            "k" => k = idx("k")?.first().copied(),
            "sets" => sets = Some(idx("sets")?),
            "focus" => focus = idx("focus")?,
            "weights" => weights = Some(nums("weights")?),
            "centroid" => centroids.push(nums("centroid")?),
            other => return Err(parse_err(path, n, format!("unknown key {other:?}"))),
        }
    }
    let missing = |what: &str| parse_err(path, 0, format!("missing {what}"));
    let sets = sets.ok_or_else(|| missing("sets"))?;
    let k = k.ok_or_else(|| missing("k"))?;
    let weight_centres = weights.ok_or_else(|| missing("weights"))?;
    if centroids.len() != k || weight_centres.len() != k {
        return Err(parse_err(path, 0, format!("expected {k} centroids and weights")));
    }
    if centroids.iter().any(|c| c.len() != sets.len()) || focus.iter().any(|&d| d >= sets.len()) {
        return Err(parse_err(path, 0, "centroid or focus dimension does not match sets"));
    }
    let model = ActivityModel { thres: thres.ok_or_else(|| missing("thres"))?, sets, centroids, weight_centres, focus };
    Ok((name.unwrap_or_default(), model))
}
