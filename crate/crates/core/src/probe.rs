//! Prime+Probe over catalogued eviction sets.
//!
//! Probing walks a set from its most to its least recently used member,
//! so `v` foreign lines inserted since the last walk cost exactly `v`
//! misses and the walk itself re-primes the set. Because each walk
//! reverses the recency order, consecutive probes alternate direction.
//!
//! A cascade walk instead repeats the previous order. Under LRU a single
//! foreign line then makes every member miss, which turns one miss into
//! `ways` misses: the amplification used with coarse timers.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::Error;
use crate::evset::{EvictionSet, EvictionSetCatalog};
use crate::memsim::{Machine, MemError, VirtAddr};
use crate::workload::Workload;

/// Loads every member in order.
pub fn prime(evset: &EvictionSet, m: &mut Machine) -> Result<(), MemError> {
    m.traverse(&evset.members).map(drop)
}

/// Timed walk of a set primed by [`prime`], last member first.
pub fn probe(evset: &EvictionSet, m: &mut Machine) -> Result<u64, MemError> {
    m.timed(|m| m.traverse_rev(&evset.members).map(drop))
}

/// A group of monitored sets with per-set walk direction.
#[derive(Clone, Debug)]
pub struct Prober {
    sets: Vec<Vec<VirtAddr>>,
    labels: Vec<usize>,
    last_forward: Vec<bool>,
}

impl Prober {
    /// Monitors the catalogue entries `indices`, which must not share
    /// members.
    pub fn new(catalog: &EvictionSetCatalog, indices: &[usize]) -> Result<Self, Error> {
        let mut seen = BTreeSet::new();
        let mut sets = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = catalog.sets.get(i).ok_or(Error::InvalidArgument("set index out of range"))?;
            for &a in &s.members {
                if !seen.insert(a) {
                    return Err(Error::InvalidArgument("monitored sets overlap"));
                }
            }
            sets.push(s.members.clone());
        }
        Ok(Self { last_forward: alloc::vec![true; sets.len()], sets, labels: indices.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Catalogue index of each monitored set.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, i: usize) -> &[VirtAddr] {
        &self.sets[i]
    }

    pub fn prime(&mut self, i: usize, m: &mut Machine) -> Result<(), MemError> {
        m.traverse(&self.sets[i])?;
        self.last_forward[i] = true;
        Ok(())
    }

    pub fn prime_all(&mut self, m: &mut Machine) -> Result<(), MemError> {
        (0..self.len()).try_for_each(|i| self.prime(i, m))
    }

    fn walk(&mut self, i: usize, forward: bool, m: &mut Machine) -> Result<usize, MemError> {
        self.last_forward[i] = forward;
        if forward {
            m.traverse(&self.sets[i])
        } else {
            m.traverse_rev(&self.sets[i])
        }
    }

    /// Untimed zig-zag walk; returns the number of misses (white-box).
    pub fn refresh(&mut self, i: usize, m: &mut Machine) -> Result<usize, MemError> {
        let dir = !self.last_forward[i];
        self.walk(i, dir, m)
    }

    /// Timed zig-zag walk.
    pub fn probe(&mut self, i: usize, m: &mut Machine) -> Result<u64, MemError> {
        let dir = !self.last_forward[i];
        m.timed(|m| self.walk(i, dir, m).map(drop))
    }

    /// Untimed walk in the previous order.
    pub fn cascade(&mut self, i: usize, m: &mut Machine) -> Result<usize, MemError> {
        let dir = self.last_forward[i];
        self.walk(i, dir, m)
    }

    /// Timed walk in the previous order.
    pub fn probe_cascade(&mut self, i: usize, m: &mut Machine) -> Result<u64, MemError> {
        let dir = self.last_forward[i];
        m.timed(|m| self.walk(i, dir, m).map(drop))
    }

    /// Waits for a timer edge, then cascades through `sets` and returns the
    /// elapsed time as one delta. Starting on an edge removes the phase
    /// uncertainty of a coarse timer.
    pub fn frame_round(&mut self, sets: &[usize], m: &mut Machine) -> Result<u64, MemError> {
        m.wait_for_tick();
        m.timed(|m| sets.iter().try_for_each(|&i| self.cascade(i, m).map(drop)))
    }

    /// Mean of `n` back-to-back probes of an otherwise idle set.
    pub fn idle_baseline(&mut self, i: usize, n: u32, m: &mut Machine) -> Result<f64, MemError> {
        self.refresh(i, m)?;
        let mut total = 0;
        for _ in 0..n.max(1) {
            total += self.probe(i, m)?;
        }
        Ok(total as f64 / n.max(1) as f64)
    }
}

/// Decision level for a latency summed over `reps` measurements, each of
/// which gains at least `margin` ns from the event being detected. It is
/// never closer to the baseline than half a timer tick.
pub fn detection_level(baseline: f64, margin: f64, reps: u32, resolution: u64) -> f64 {
    baseline + (margin * reps as f64).max(resolution as f64 / 2.0)
}

/// Probe latencies, `rows` monitored sets by `cols` time slots.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Memorygram {
    pub rows: usize,
    pub cols: usize,
    /// Row-major latencies in ns.
    pub latencies: Vec<u64>,
    pub slot_duration: u64,
    pub set_labels: Vec<usize>,
}

impl Memorygram {
    pub fn new(rows: usize, cols: usize, slot_duration: u64, set_labels: Vec<usize>) -> Self {
        Self { rows, cols, latencies: alloc::vec![0; rows * cols], slot_duration, set_labels }
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.latencies[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u64) {
        self.latencies[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.latencies[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<u64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Column `col` as a sample vector for classification.
    pub fn column_f64(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col) as f64).collect()
    }

    /// Columns `[start, end)` as a new memorygram.
    pub fn slice_cols(&self, start: usize, end: usize) -> Memorygram {
        let end = end.min(self.cols);
        let start = start.min(end);
        let mut out = Memorygram::new(self.rows, end - start, self.slot_duration, self.set_labels.clone());
        for r in 0..self.rows {
            for c in start..end {
                out.set(r, c - start, self.get(r, c));
            }
        }
        out
    }
}

pub const DEFAULT_SLOT_NS: u64 = 250_000;

/// Samples every monitored set once per slot for `duration` ns.
///
/// Each slot starts on its scheduled boundary, lets the background
/// workload run, then probes the sets in catalogue order. A round that
/// ends after its slot is an error.
pub fn capture(
    prober: &mut Prober,
    duration: u64,
    slot_duration: u64,
    workload: &mut dyn Workload,
    m: &mut Machine,
) -> Result<Memorygram, Error> {
    if slot_duration == 0 {
        return Err(Error::InvalidArgument("slot duration must be positive"));
    }
    let cols = (duration / slot_duration) as usize;
    let mut gram = Memorygram::new(prober.len(), cols, slot_duration, prober.labels().to_vec());
    prober.prime_all(m)?;
    let start = m.clock_ns();
    for slot in 0..cols {
        let slot_start = start + slot as u64 * slot_duration;
        m.wait_until(slot_start);
        workload.step(slot as u64, m)?;
        for r in 0..prober.len() {
            let t = prober.probe(r, m)?;
            gram.set(r, slot, t);
        }
        let end = m.clock_ns();
        if end > slot_start + slot_duration {
            return Err(Error::SlotOverrun { slot, overrun_ns: end - slot_start - slot_duration });
        }
    }
    m.wait_until(start + cols as u64 * slot_duration);
    Ok(gram)
}
