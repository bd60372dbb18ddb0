//! The TOML configuration file.
//!
//! Every table mirrors one configuration struct of the core crate and uses
//! its field names as keys; omitted keys keep their defaults and unknown
//! keys are rejected. Command-line flags are applied on top.

use std::fs;
use std::path::Path;

use llc_lab_core::covert::ChannelConfig;
use llc_lab_core::evset::{CalibrationConfig, ProfilingConfig};
use llc_lab_core::memsim::CacheConfig;
use llc_lab_core::regions::RegionConfig;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub cache: CacheConfig,
    pub calibration: CalibrationConfig,
    pub profiling: ProfilingConfig,
    pub channel: ChannelConfig,
    pub regions: RegionConfig,
    pub classify: ClassifyConfig,
}

/// The synthetic two-activity scenario used by `classify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Monitored sets (the first ones in catalogue order).
    pub sets: usize,
    pub slots: u64,
    pub slot_us: u64,
    pub k: usize,
    pub min_episode: usize,
    /// Probe latency increase over the idle baseline that marks a set active.
    pub margin: f64,
    /// Episode boundary tolerance, in slots, when scoring.
    pub tolerance: usize,
    pub network_sets: usize,
    pub network_density: f64,
    pub network_bursts: usize,
    pub network_min_len: u64,
    pub network_max_len: u64,
    pub mouse_sets: usize,
    pub mouse_density: f64,
    pub mouse_bursts: usize,
    pub mouse_min_len: u64,
    pub mouse_max_len: u64,
    pub min_gap: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            sets: 128,
            slots: 2000,
            slot_us: 250,
            k: 2,
            min_episode: 2,
            margin: 25.0,
            tolerance: 1,
            network_sets: 40,
            network_density: 0.8,
            network_bursts: 12,
            network_min_len: 4,
            network_max_len: 20,
            mouse_sets: 25,
            mouse_density: 0.9,
            mouse_bursts: 4,
            mouse_min_len: 60,
            mouse_max_len: 200,
            min_gap: 8,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(format!("classify: {m}")));
        if self.network_sets + self.mouse_sets > self.sets {
            return bad("network_sets + mouse_sets exceeds sets");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.slot_us == 0 || self.slots == 0 {
            return bad("slots and slot_us must be positive");
        }
        for d in [self.network_density, self.mouse_density] {
            if !(0.0..=1.0).contains(&d) {
                return bad("densities must lie in [0, 1]");
            }
        }
        if self.network_min_len > self.network_max_len || self.mouse_min_len > self.mouse_max_len {
            return bad("min_len exceeds max_len");
        }
        Ok(())
    }
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| LabError::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate().map_err(|e| LabError::Config(format!("cache: {e}")))?;
        self.profiling.validate().map_err(|e| LabError::Config(format!("profiling: {e}")))?;
        self.channel.validate(&self.cache).map_err(|e| LabError::Config(format!("channel: {e}")))?;
        if self.regions.repetitions == 0 {
            return Err(LabError::Config("regions: repetitions must be at least 1".into()));
        }
        if self.calibration.samples == 0 || self.calibration.amplification == 0 {
            return Err(LabError::Config("calibration: samples and amplification must be positive".into()));
        }
        self.classify.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
