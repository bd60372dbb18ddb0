use core::fmt;

/// Hash applied to the physical-address bits above the directly mapped
/// index field to form the upper (slice) bits of the set index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SliceHash {
    /// Two parity functions over fixed address masks (two slice bits).
    #[default]
    Xor,
    /// The two address bits directly above the low index field.
    Identity,
    /// No slice bits; the set index is taken directly from the address.
    None,
}

impl SliceHash {
    pub const fn bits(self) -> u32 {
        match self {
            SliceHash::Xor | SliceHash::Identity => 2,
            SliceHash::None => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Replacement {
    #[default]
    Lru,
    /// Evict a uniformly random way on a miss into a full set.
    Random,
}

/// Geometry, latencies, timer model and seed of a simulated machine.
///
/// All latencies are in nanoseconds. With the defaults the cache is
/// 8192 sets x 12 ways x 64 bytes = 6 MiB and the hit/miss gap is 50 ns.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct CacheConfig {
    pub num_sets: usize,
    pub ways: usize,
    pub line_size: u64,
    pub hit_latency: u64,
    pub miss_latency: u64,
    /// Fixed cost of every timed operation, on top of its cache latency.
    pub op_overhead: u64,
    /// Timer quantum; every timestamp is a multiple of it.
    pub timer_resolution: u64,
    /// Standard deviation of the Gaussian noise added to each access.
    pub jitter_stddev: f64,
    pub slice_hash: SliceHash,
    pub replacement: Replacement,
    /// Number of 4 KiB physical frames available to the allocator.
    pub frame_pool: u64,
    pub rng_seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            num_sets: 8192,
            ways: 12,
            line_size: 64,
            hit_latency: 60,
            miss_latency: 110,
            op_overhead: 20,
            timer_resolution: 1,
            jitter_stddev: 0.0,
            slice_hash: SliceHash::Xor,
            replacement: Replacement::Lru,
            frame_pool: 1 << 18,
            rng_seed: 0,
        }
    }
}

impl CacheConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { rng_seed: seed, ..Self::default() }
    }

    pub fn capacity(&self) -> u64 {
        self.num_sets as u64 * self.ways as u64 * self.line_size
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_sets == 0 || !self.num_sets.is_power_of_two() {
            return Err(ConfigError::NumSets(self.num_sets));
        }
        if self.ways == 0 || self.ways > u8::MAX as usize {
            return Err(ConfigError::Ways(self.ways));
        }
        if !self.line_size.is_power_of_two() || !(8..=4096).contains(&self.line_size) {
            return Err(ConfigError::LineSize(self.line_size));
        }
        if self.miss_latency <= self.hit_latency {
            return Err(ConfigError::Latencies { hit: self.hit_latency, miss: self.miss_latency });
        }
        if self.timer_resolution == 0 {
            return Err(ConfigError::TimerResolution);
        }
        if !(self.jitter_stddev >= 0.0 && self.jitter_stddev.is_finite()) {
            return Err(ConfigError::Jitter);
        }
        if self.frame_pool == 0 || self.frame_pool > u32::MAX as u64 {
            return Err(ConfigError::FramePool(self.frame_pool));
        }
        if self.slice_hash.bits() > self.num_sets.trailing_zeros() {
            return Err(ConfigError::SliceBits);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    NumSets(usize),
    Ways(usize),
    LineSize(u64),
    Latencies {
        hit: u64,
        miss: u64,
    },
    TimerResolution,
    Jitter,
    FramePool(u64),
    SliceBits,
    /// A channel period shorter than one prime+probe round.
    PeriodTooShort {
        period: u64,
        minimum: u64,
    },
    Channel(&'static str),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::NumSets(n) => write!(f, "num_sets must be a power of two, got {n}"),
            ConfigError::Ways(w) => write!(f, "ways must be in 1..=255, got {w}"),
            ConfigError::LineSize(l) => {
                write!(f, "line_size must be a power of two in 8..=4096, got {l}")
            }
            ConfigError::Latencies { hit, miss } => {
                write!(f, "miss_latency ({miss}) must exceed hit_latency ({hit})")
            }
            ConfigError::TimerResolution => f.write_str("timer_resolution must be at least 1 ns"),
            ConfigError::Jitter => f.write_str("jitter_stddev must be finite and non-negative"),
            ConfigError::FramePool(n) => write!(f, "frame_pool must be in 1..2^32, got {n}"),
            ConfigError::SliceBits => f.write_str("slice hash needs more index bits than num_sets has"),
            ConfigError::PeriodTooShort { period, minimum } => {
                write!(f, "channel period {period} ns is shorter than one probe round ({minimum} ns)")
            }
            ConfigError::Channel(what) => write!(f, "invalid channel configuration: {what}"),
        }
    }
}

impl core::error::Error for ConfigError {}
