//! Activity detection from memorygrams.
//!
//! Training is unsupervised: slots are clustered by their Hamming weight
//! (how many sets were active), and each cluster's mean latency vector
//! becomes a centroid. Classification assigns a slot to the nearest
//! centroid; runs of labels become episodes.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::probe::Memorygram;
use crate::workload::Interval;

pub const DEFAULT_MIN_EPISODE: usize = 2;

/// Number of sets above `thres` in each slot.
pub fn hamming_weights(g: &Memorygram, thres: f64) -> Vec<u32> {
    let mut w = vec![0u32; g.cols];
    for r in 0..g.rows {
        for (c, &v) in g.row(r).iter().enumerate() {
            if v as f64 > thres {
                w[c] += 1;
            }
        }
    }
    w
}

/// Lloyd's algorithm on the line. Returns centres in ascending order and
/// each value's cluster index into them.
///
/// Initial centres are one seeded pick from each of `k` equal quantile
/// bins of the distinct values, so they are distinct by construction.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<(Vec<f64>, Vec<usize>), Error> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1"));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let n = distinct.len();
    if n < k {
        return Err(Error::DegenerateClustering { clusters: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: Vec<f64> = (0..k)
        .map(|j| {
            let lo = j * n / k;
            let hi = ((j + 1) * n / k).max(lo + 1);
            distinct[rng.random_range(lo..hi)]
        })
        .collect();

    let nearest = |centres: &[f64], v: f64| {
        let mut best = 0;
        for (i, &c) in centres.iter().enumerate() {
            if (v - c).abs() < (v - centres[best]).abs() {
                best = i;
            }
        }
        best
    };
    let mut assign = vec![usize::MAX; values.len()];
    for _ in 0..1000 {
        let next: Vec<usize> = values.iter().map(|&v| nearest(&centres, v)).collect();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&v, &a) in values.iter().zip(&next) {
            sums[a] += v;
            counts[a] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::DegenerateClustering { clusters: k });
        }
        let done = next == assign;
        assign = next;
        centres = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        if done {
            break;
        }
    }
    // Order clusters by centre.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centres[a].total_cmp(&centres[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let sorted = order.iter().map(|&c| centres[c]).collect();
    Ok((sorted, assign.into_iter().map(|a| rank[a]).collect()))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActivityModel {
    /// Binarisation threshold on probe latency, ns.
    pub thres: f64,
    /// Catalogue indices of the monitored sets (centroid dimensions).
    pub sets: Vec<usize>,
    /// One mean latency vector per cluster, label order.
    pub centroids: Vec<Vec<f64>>,
    /// Hamming-weight centre of each cluster; label 0 is the quietest.
    pub weight_centres: Vec<f64>,
    /// Dimensions used for distances; empty means all.
    pub focus: Vec<usize>,
}

impl ActivityModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dims(&self) -> usize {
        self.sets.len()
    }

    /// Restricts distances to the sets where some cluster's centroid
    /// exceeds the quietest cluster's by more than `margin`.
    pub fn focus(mut self, margin: f64) -> Self {
        let idle = &self.centroids[0];
        self.focus =
            (0..self.dims()).filter(|&d| self.centroids[1..].iter().any(|c| c[d] - idle[d] > margin)).collect();
        self
    }

    fn distance2(&self, sample: &[f64], c: &[f64]) -> f64 {
        let sq = |d: usize| (sample[d] - c[d]) * (sample[d] - c[d]);
        if self.focus.is_empty() {
            (0..sample.len()).map(sq).sum()
        } else {
            self.focus.iter().map(|&d| sq(d)).sum()
        }
    }
}

/// Clusters slots by Hamming weight and averages each cluster's columns.
pub fn train(g: &Memorygram, k: usize, thres: f64, seed: u64) -> Result<ActivityModel, Error> {
    if k < 2 {
        return Err(Error::InvalidArgument("k must be at least 2"));
    }
    if g.cols < k {
        return Err(Error::DegenerateClustering { clusters: k });
    }
    let weights: Vec<f64> = hamming_weights(g, thres).into_iter().map(f64::from).collect();
    let (weight_centres, assign) = kmeans_1d(&weights, k, seed)?;
    let mut centroids = vec![vec![0.0; g.rows]; k];
    let mut counts = vec![0usize; k];
    for (col, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (r, c) in centroids[a].iter_mut().enumerate() {
            *c += g.get(r, col) as f64;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(ActivityModel { thres, sets: g.set_labels.clone(), centroids, weight_centres, focus: Vec::new() })
}

/// Nearest centroid by Euclidean distance; ties go to the lower label.
pub fn classify_slot(sample: &[f64], model: &ActivityModel) -> Result<usize, Error> {
    if sample.len() != model.dims() {
        return Err(Error::DimensionMismatch { expected: model.dims(), found: sample.len() });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in model.centroids.iter().enumerate() {
        let d = model.distance2(sample, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

pub fn classify_all(g: &Memorygram, model: &ActivityModel) -> Result<Vec<usize>, Error> {
    (0..g.cols).map(|c| classify_slot(&g.column_f64(c), model)).collect()
}

/// A half-open run of slots `[start, end)` sharing one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Run-length encodes `labels`, then folds runs shorter than `min_len`
/// into the preceding run (the following one for a leading run).
pub fn episodes_from_labels(labels: &[usize], min_len: usize) -> Vec<Episode> {
    let mut runs: Vec<Episode> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(e) if e.label == l => e.end = i + 1,
            _ => runs.push(Episode { start: i, end: i + 1, label: l }),
        }
    }
    while runs.len() > 1 {
        let Some(i) = runs.iter().position(|e| e.len() < min_len) else {
            break;
        };
        let short = runs.remove(i);
        if i > 0 {
            runs[i - 1].end = short.end;
        } else {
            runs[0].start = short.start;
        }
        // Coalesce neighbours that now share a label.
        let mut merged: Vec<Episode> = Vec::with_capacity(runs.len());
        for e in runs {
            match merged.last_mut() {
                Some(p) if p.label == e.label => p.end = e.end,
                _ => merged.push(e),
            }
        }
        runs = merged;
    }
    runs
}

pub fn detect_episodes(g: &Memorygram, model: &ActivityModel, min_len: usize) -> Result<Vec<Episode>, Error> {
    Ok(episodes_from_labels(&classify_all(g, model)?, min_len))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpisodeScore {
    pub truth: usize,
    /// Ground-truth intervals matched by a detected active episode.
    pub matched: usize,
    /// Detected active episodes matching no ground-truth interval.
    pub spurious: usize,
}

impl EpisodeScore {
    pub fn accuracy(&self) -> f64 {
        let denom = self.truth + self.spurious;
        if denom == 0 {
            1.0
        } else {
            self.matched as f64 / denom as f64
        }
    }
}

/// Compares detected episodes with labels other than 0 against ground
/// truth; an episode matches an interval if both ends agree to within
/// `tolerance` slots.
pub fn score_episodes(detected: &[Episode], truth: &[Interval], tolerance: usize) -> EpisodeScore {
    let near = |a: usize, b: u64| (a as i64 - b as i64).unsigned_abs() <= tolerance as u64;
    let active: Vec<&Episode> = detected.iter().filter(|e| e.label != 0).collect();
    let hit = |e: &Episode, &(s, t): &Interval| near(e.start, s) && near(e.end, t);
    EpisodeScore {
        truth: truth.len(),
        matched: truth.iter().filter(|iv| active.iter().any(|e| hit(e, iv))).count(),
        spurious: active.iter().filter(|e| !truth.iter().any(|iv| hit(e, iv))).count(),
    }
}
