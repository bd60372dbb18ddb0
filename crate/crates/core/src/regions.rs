//! Which monitored sets does an operation touch?

use alloc::vec::Vec;

use crate::error::Error;
use crate::memsim::Machine;
use crate::probe::Prober;
use crate::workload::Workload;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct RegionConfig {
    /// Trigger runs per set; a set is reported by strict majority.
    pub repetitions: u32,
    /// Probe latency increase (ns) that counts as a slow-down.
    pub margin: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { repetitions: 5, margin: 25.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionReport {
    /// Positions (rows of the prober) that slowed down, ascending.
    pub detected: Vec<usize>,
    /// Mean post-minus-baseline probe latency per position.
    pub deltas: Vec<f64>,
}

impl RegionReport {
    /// Detected catalogue indices.
    pub fn catalog_indices(&self, prober: &Prober) -> Vec<usize> {
        self.detected.iter().map(|&i| prober.labels()[i]).collect()
    }
}

/// For every monitored set: prime, take a baseline probe, run the trigger,
/// probe again. Repetition `r` runs the trigger as its slot `r`.
pub fn identify(
    prober: &mut Prober,
    trigger: &mut dyn Workload,
    cfg: &RegionConfig,
    m: &mut Machine,
) -> Result<RegionReport, Error> {
    if cfg.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1"));
    }
    let mut report = RegionReport::default();
    for i in 0..prober.len() {
        let mut votes = 0;
        let mut sum = 0.0;
        for rep in 0..cfg.repetitions {
            prober.prime(i, m)?;
            let base = prober.probe(i, m)?;
            trigger.step(rep as u64, m)?;
            let post = prober.probe(i, m)?;
            let delta = post as f64 - base as f64;
            sum += delta;
            if delta > cfg.margin {
                votes += 1;
            }
        }
        report.deltas.push(sum / cfg.repetitions as f64);
        if 2 * votes > cfg.repetitions {
            report.detected.push(i);
        }
    }
    Ok(report)
}

/// Sets detected for `op_a` but not for `op_b`.
pub fn differential(
    prober: &mut Prober,
    op_a: &mut dyn Workload,
    op_b: &mut dyn Workload,
    cfg: &RegionConfig,
    m: &mut Machine,
) -> Result<Vec<usize>, Error> {
    let a = identify(prober, op_a, cfg, m)?;
    let b = identify(prober, op_b, cfg, m)?;
    Ok(a.detected.into_iter().filter(|i| b.detected.binary_search(i).is_err()).collect())
}
