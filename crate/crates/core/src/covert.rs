//! A covert channel through the LLC.
//!
//! The transmitter owns `copies` pages. In every period it loads line `i`
//! of each copy for every 1-bit `i` of the current 64-bit frame. The
//! receiver monitors the 64 sets of one catalogued frame; a probe slowed
//! down by the transmitter's load decodes as 1 (on-off keying).
//!
//! The transmitter plays `[preamble, payload...]` on a loop, aligned to
//! period boundaries of the shared clock. The receiver scans catalogued
//! frames in a seeded random order until one shows activity followed by
//! the preamble.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::evset::{EvictionSetCatalog, FRAME_LINES};
use crate::memsim::{CacheConfig, ConfigError, Machine, MemError, VirtAddr, PAGE_SIZE};
use crate::probe::{detection_level, Prober};
use crate::workload::Workload;

pub const LANES: usize = 64;

/// Default synchronisation word: 32 set bits spread over all lanes.
pub const DEFAULT_PREAMBLE: u64 = 0xB38F_0E5A_C2D1_794C;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum NoisePreset {
    /// Both parties on bare metal: 1 ns timer, 1 ns jitter.
    #[default]
    HostToHost,
    /// Receiver inside a VM: 25 us timer, 3 ns jitter.
    HostToVm,
}

impl NoisePreset {
    pub fn timer_resolution(self) -> u64 {
        match self {
            NoisePreset::HostToHost => 1,
            NoisePreset::HostToVm => 25_000,
        }
    }

    pub fn jitter_stddev(self) -> f64 {
        match self {
            NoisePreset::HostToHost => 1.0,
            NoisePreset::HostToVm => 3.0,
        }
    }

    /// Symbol period in ns.
    pub fn period(self) -> u64 {
        match self {
            NoisePreset::HostToHost => 200_000,
            NoisePreset::HostToVm => 8_000_000,
        }
    }

    /// Transmit/probe cycles summed per lane measurement.
    pub fn lane_repetitions(self) -> u32 {
        match self {
            NoisePreset::HostToHost => 1,
            NoisePreset::HostToVm => 64,
        }
    }

    pub fn apply(self, m: &mut Machine) -> Result<(), ConfigError> {
        m.set_timer(self.timer_resolution(), self.jitter_stddev())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ChannelConfig {
    pub copies: u32,
    /// ns per frame.
    pub period: u64,
    /// Written as a hex string in text formats whose integers are signed.
    #[cfg_attr(feature = "serde", serde(with = "hex_word"))]
    pub sync_preamble: u64,
    pub noise_preset: NoisePreset,
    /// 1 selects single zig-zag probes per lane; more selects repeated
    /// cascade probes summed into one timer reading.
    pub lane_repetitions: u32,
    /// Maximum number of frames the receiver tries.
    pub scan_budget: usize,
    /// Periods to wait for the preamble once a frame shows activity.
    pub sync_timeout: u32,
    pub scan_seed: u64,
    /// Bit errors tolerated when matching the preamble.
    pub preamble_tolerance: u32,
    /// Latency increase (ns) per extra miss that counts as activity.
    pub margin: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::preset(NoisePreset::HostToHost)
    }
}

impl ChannelConfig {
    pub fn preset(p: NoisePreset) -> Self {
        Self {
            copies: 1,
            period: p.period(),
            sync_preamble: DEFAULT_PREAMBLE,
            noise_preset: p,
            lane_repetitions: p.lane_repetitions(),
            scan_budget: 1 << 16,
            sync_timeout: 1024,
            scan_seed: 0,
            preamble_tolerance: 3,
            margin: 25.0,
        }
    }

    pub fn host_to_host() -> Self {
        Self::preset(NoisePreset::HostToHost)
    }

    pub fn host_to_vm() -> Self {
        Self::preset(NoisePreset::HostToVm)
    }

    /// Worst-case duration of one receive round over all 64 lanes.
    pub fn min_period(&self, machine: &CacheConfig) -> u64 {
        let walk = machine.ways as u64 * (machine.miss_latency + machine.op_overhead);
        let res = if self.lane_repetitions > 1 { self.noise_preset.timer_resolution() } else { 0 };
        LANES as u64 * (self.lane_repetitions as u64 * walk + res)
    }

    pub fn validate(&self, machine: &CacheConfig) -> Result<(), ConfigError> {
        if self.copies == 0 {
            return Err(ConfigError::Channel("copies must be at least 1"));
        }
        if self.lane_repetitions == 0 {
            return Err(ConfigError::Channel("lane_repetitions must be at least 1"));
        }
        if self.sync_preamble == 0 {
            return Err(ConfigError::Channel("sync_preamble must have a set bit"));
        }
        if machine.line_size * LANES as u64 != PAGE_SIZE {
            return Err(ConfigError::Channel("the channel needs 64 lines per page"));
        }
        let minimum = self.min_period(machine);
        if self.period < minimum {
            return Err(ConfigError::PeriodTooShort { period: self.period, minimum });
        }
        Ok(())
    }

    /// Nominal bandwidth in bits per second.
    pub fn nominal_bandwidth(&self) -> f64 {
        LANES as f64 * 1e9 / self.period as f64
    }
}

#[cfg(feature = "serde")]
mod hex_word {
    use alloc::format;
    use alloc::string::String;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#018x}"))
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Word {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Word::deserialize(d)? {
            Word::Int(v) => Ok(v),
            Word::Text(t) => {
                let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(&t);
                u64::from_str_radix(&digits.replace('_', ""), 16).map_err(de::Error::custom)
            }
        }
    }
}

/// Packs bits into frames, lane `i` of frame `f` carrying bit `64f + i`.
pub fn pack_frames(bits: &[bool]) -> Vec<u64> {
    bits.chunks(LANES).map(|c| c.iter().enumerate().fold(0u64, |w, (i, &b)| w | (u64::from(b) << i))).collect()
}

pub fn unpack_frames(frames: &[u64], n_bits: usize) -> Vec<bool> {
    (0..n_bits).map(|i| frames[i / LANES] >> (i % LANES) & 1 == 1).collect()
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|&b| (0..8).map(move |i| b >> i & 1 == 1)).collect()
}

pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |b, (i, &v)| b | (u8::from(v) << i))).collect()
}

#[derive(Clone, Debug)]
pub struct Transmitter {
    copies: Vec<VirtAddr>,
    stream: Vec<u64>,
    line: u64,
}

impl Transmitter {
    pub fn new(m: &mut Machine, cfg: &ChannelConfig, payload: &[bool]) -> Result<Self, Error> {
        Self::with_frames(m, cfg, pack_frames(payload))
    }

    pub fn with_frames(m: &mut Machine, cfg: &ChannelConfig, frames: Vec<u64>) -> Result<Self, Error> {
        cfg.validate(m.config())?;
        let copies =
            (0..cfg.copies).map(|_| m.allocate(PAGE_SIZE).map(|b| b.base)).collect::<Result<Vec<_>, MemError>>()?;
        let mut stream = Vec::with_capacity(frames.len() + 1);
        stream.push(cfg.sync_preamble);
        stream.extend(frames);
        Ok(Self { copies, stream, line: m.config().line_size })
    }

    pub fn copies(&self) -> &[VirtAddr] {
        &self.copies
    }

    /// `[preamble, payload...]`.
    pub fn stream(&self) -> &[u64] {
        &self.stream
    }

    pub fn payload_frames(&self) -> usize {
        self.stream.len() - 1
    }

    /// The frame on air during period `p`.
    pub fn frame_at(&self, p: u64) -> u64 {
        self.stream[(p % self.stream.len() as u64) as usize]
    }

    pub fn lane_line(&self, copy: usize, lane: usize) -> VirtAddr {
        self.copies[copy].add(lane as u64 * self.line)
    }

    pub fn touch_lane(&self, lane: usize, m: &mut Machine) -> Result<(), MemError> {
        for c in 0..self.copies.len() {
            m.touch(self.lane_line(c, lane))?;
        }
        Ok(())
    }

    pub fn emit(&self, word: u64, m: &mut Machine) -> Result<(), MemError> {
        for lane in 0..LANES {
            if word >> lane & 1 == 1 {
                self.touch_lane(lane, m)?;
            }
        }
        Ok(())
    }
}

impl Workload for Transmitter {
    fn step(&mut self, period: u64, m: &mut Machine) -> Result<(), MemError> {
        self.emit(self.frame_at(period), m)
    }
}

/// Everything besides the receiver that runs on the machine.
pub struct Actors<'a> {
    pub tx: Option<&'a Transmitter>,
    pub ambient: &'a mut dyn Workload,
}

/// A receiver bound to one group of 64 lanes.
#[derive(Clone, Debug)]
pub struct Receiver {
    prober: Prober,
    level: f64,
    cfg: ChannelConfig,
}

impl Receiver {
    /// Monitors `frames` (each 64 catalogue indices in lane order) and
    /// calibrates the decision level on an idle probe of the first lane.
    pub fn new(
        catalog: &EvictionSetCatalog,
        frames: &[Vec<usize>],
        cfg: &ChannelConfig,
        m: &mut Machine,
    ) -> Result<Self, Error> {
        cfg.validate(m.config())?;
        let indices: Vec<usize> = frames.iter().flatten().copied().collect();
        if indices.is_empty() || indices.len() % LANES != 0 {
            return Err(Error::InvalidArgument("receiver needs whole frames of 64 lanes"));
        }
        let prober = Prober::new(catalog, &indices)?;
        let mut rx = Self { prober, level: 0.0, cfg: cfg.clone() };
        rx.calibrate(m)?;
        Ok(rx)
    }

    fn calibrate(&mut self, m: &mut Machine) -> Result<(), Error> {
        let reps = self.cfg.lane_repetitions;
        let res = m.config().timer_resolution;
        let (baseline, margin) = if reps == 1 {
            (self.prober.idle_baseline(0, 8, m)?, self.cfg.margin)
        } else {
            self.prober.prime(0, m)?;
            let mut total = 0;
            for _ in 0..4 {
                total += self.measure_lane(0, 0, None, m)?;
            }
            // A cascade walk turns one foreign line into `ways` misses.
            (total as f64 / 4.0, self.cfg.margin * m.config().ways as f64)
        };
        self.level = detection_level(baseline, margin, reps, res);
        Ok(())
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn frames(&self) -> usize {
        self.prober.len() / LANES
    }

    /// Catalogue indices of frame `f`, lane order.
    pub fn lanes(&self, f: usize) -> &[usize] {
        &self.prober.labels()[f * LANES..(f + 1) * LANES]
    }

    fn measure_lane(
        &mut self,
        pos: usize,
        lane: usize,
        live: Option<(&Transmitter, u64)>,
        m: &mut Machine,
    ) -> Result<u64, MemError> {
        m.wait_for_tick();
        let reps = self.cfg.lane_repetitions;
        let prober = &mut self.prober;
        m.timed(|m| {
            for _ in 0..reps {
                if let Some((tx, p)) = live {
                    if tx.frame_at(p) >> lane & 1 == 1 {
                        tx.touch_lane(lane, m)?;
                    }
                }
                prober.cascade(pos, m)?;
            }
            Ok(())
        })
    }

    pub fn prime_frame(&mut self, f: usize, m: &mut Machine) -> Result<(), MemError> {
        (f * LANES..(f + 1) * LANES).try_for_each(|i| self.prober.prime(i, m))
    }

    /// Receives the frame sent during period `p` on frame group `f`.
    pub fn observe(&mut self, f: usize, p: u64, actors: &mut Actors<'_>, m: &mut Machine) -> Result<u64, MemError> {
        m.wait_until(p * self.cfg.period);
        actors.ambient.step(p, m)?;
        let mut word = 0u64;
        if self.cfg.lane_repetitions == 1 {
            if let Some(tx) = actors.tx {
                tx.emit(tx.frame_at(p), m)?;
            }
            for lane in 0..LANES {
                let t = self.prober.probe(f * LANES + lane, m)?;
                if t as f64 > self.level {
                    word |= 1 << lane;
                }
            }
        } else {
            for lane in 0..LANES {
                let live = actors.tx.map(|tx| (tx, p));
                let t = self.measure_lane(f * LANES + lane, lane, live, m)?;
                if t as f64 > self.level {
                    word |= 1 << lane;
                }
            }
        }
        Ok(word)
    }

    /// First period that has not started yet.
    pub fn next_period(&self, m: &Machine) -> u64 {
        m.clock_ns().div_ceil(self.cfg.period)
    }
}

/// A located carrier.
#[derive(Clone, Debug)]
pub struct Carrier {
    /// Catalogue indices of the carrier frame, lane order.
    pub lanes: Vec<usize>,
    /// Period of the first payload frame.
    pub next_period: u64,
    /// Candidate frames tried, including the carrier.
    pub scanned: usize,
    receiver: Receiver,
    group: usize,
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

pub fn locate_carrier(
    catalog: &EvictionSetCatalog,
    cfg: &ChannelConfig,
    actors: &mut Actors<'_>,
    m: &mut Machine,
) -> Result<Carrier, Error> {
    let mut groups: Vec<Vec<usize>> = catalog.complete_frames().map(|(_, l)| l).collect();
    if groups.is_empty() {
        return Err(Error::CarrierNotFound { scanned: 0 });
    }
    debug_assert!(groups.iter().all(|g| g.len() == FRAME_LINES));
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.scan_seed));
    let mut rx = Receiver::new(catalog, &groups, cfg, m)?;
    let tol = cfg.preamble_tolerance;
    for (g, lanes) in groups.iter().enumerate().take(cfg.scan_budget) {
        rx.prime_frame(g, m)?;
        let mut p = rx.next_period(m);
        let mut word = rx.observe(g, p, actors, m)?;
        if word == 0 {
            continue;
        }
        for _ in 0..=cfg.sync_timeout {
            if hamming(word, cfg.sync_preamble) <= tol {
                return Ok(Carrier {
                    lanes: lanes.clone(),
                    next_period: p + 1,
                    scanned: g + 1,
                    receiver: rx,
                    group: g,
                });
            }
            p += 1;
            word = rx.observe(g, p, actors, m)?;
        }
    }
    Err(Error::CarrierNotFound { scanned: groups.len().min(cfg.scan_budget) })
}

/// Reads `n_bits` following the preamble, then checks that the preamble
/// comes round again.
pub fn receive(
    carrier: &mut Carrier,
    n_bits: usize,
    cfg: &ChannelConfig,
    actors: &mut Actors<'_>,
    m: &mut Machine,
) -> Result<Vec<bool>, Error> {
    let frames = n_bits.div_ceil(LANES);
    let mut words = Vec::with_capacity(frames);
    for _ in 0..frames {
        words.push(carrier.receiver.observe(carrier.group, carrier.next_period, actors, m)?);
        carrier.next_period += 1;
    }
    if frames > 0 {
        let p = carrier.next_period;
        let word = carrier.receiver.observe(carrier.group, p, actors, m)?;
        carrier.next_period += 1;
        if hamming(word, cfg.sync_preamble) > cfg.preamble_tolerance {
            return Err(Error::SyncLost { period: p });
        }
    }
    Ok(unpack_frames(&words, n_bits))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelReport {
    pub payload_bits: usize,
    /// 64 per frame on air, including padding of the last frame.
    pub channel_bits: usize,
    pub elapsed_ns: u64,
    /// `channel_bits` per second of simulated time.
    pub bandwidth_bps: f64,
    /// `payload_bits` per second of simulated time.
    pub goodput_bps: f64,
    pub bit_errors: usize,
    pub ber: f64,
    pub scanned: usize,
    pub received: Vec<bool>,
}

/// Loopback run: applies the noise preset, starts a transmitter with
/// `payload`, locates it and receives one copy of the payload.
pub fn measure_channel(
    payload: &[bool],
    cfg: &ChannelConfig,
    catalog: &EvictionSetCatalog,
    ambient: &mut dyn Workload,
    m: &mut Machine,
) -> Result<ChannelReport, Error> {
    cfg.noise_preset.apply(m)?;
    cfg.validate(m.config())?;
    if payload.is_empty() {
        return Ok(ChannelReport::default());
    }
    let tx = Transmitter::new(m, cfg, payload)?;
    let mut actors = Actors { tx: Some(&tx), ambient };
    let mut carrier = locate_carrier(catalog, cfg, &mut actors, m)?;
    let first = carrier.next_period;
    let received = receive(&mut carrier, payload.len(), cfg, &mut actors, m)?;
    let frames = payload.len().div_ceil(LANES);
    let elapsed_ns = frames as u64 * cfg.period;
    debug_assert_eq!(carrier.next_period - first, frames as u64 + 1);
    let bit_errors = received.iter().zip(payload).filter(|(a, b)| a != b).count();
    let secs = elapsed_ns as f64 / 1e9;
    Ok(ChannelReport {
        payload_bits: payload.len(),
        channel_bits: frames * LANES,
        elapsed_ns,
        bandwidth_bps: (frames * LANES) as f64 / secs,
        goodput_bps: payload.len() as f64 / secs,
        bit_errors,
        ber: bit_errors as f64 / payload.len() as f64,
        scanned: carrier.scanned,
        received,
    })
}

// 5x7 glyphs, one string per row, '#' = set.
const GLYPHS: [[&str; 7]; 6] = [
    ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
    [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
    [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
];

/// The word "Usenix" as frames: one frame per pixel column, each glyph
/// row spread over 8 lanes starting at lane 4, a blank column between
/// letters.
pub fn usenix_bitmap() -> Vec<u64> {
    let mut frames = Vec::new();
    for glyph in &GLYPHS {
        for col in 0..5 {
            let mut w = 0u64;
            for (row, line) in glyph.iter().enumerate() {
                if line.as_bytes()[col] == b'#' {
                    w |= 0xFF << (4 + 8 * row);
                }
            }
            frames.push(w);
        }
        frames.push(0);
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trips() {
        let bits: Vec<bool> = (0..200).map(|i| i % 3 == 0 || i % 7 == 1).collect();
        let frames = pack_frames(&bits);
        assert_eq!(frames.len(), 4);
        assert_eq!(unpack_frames(&frames, bits.len()), bits);
        let bytes = [0x00, 0xff, 0x5a, 0x81];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&bytes)), bytes);
    }

    #[test]
    fn preset_periods_give_nominal_rates() {
        assert_eq!(ChannelConfig::host_to_host().nominal_bandwidth(), 320_000.0);
        assert_eq!(ChannelConfig::host_to_vm().nominal_bandwidth(), 8_000.0);
    }

    #[test]
    fn presets_fit_their_period() {
        let mc = CacheConfig::default();
        for cfg in [ChannelConfig::host_to_host(), ChannelConfig::host_to_vm()] {
            cfg.validate(&mc).unwrap();
        }
        assert_eq!(ChannelConfig::host_to_vm().min_period(&mc), 64 * (64 * 12 * 130 + 25_000));
        let short = ChannelConfig { period: 50_000, ..ChannelConfig::host_to_host() };
        assert!(matches!(short.validate(&mc), Err(ConfigError::PeriodTooShort { .. })));
    }

    #[test]
    fn bitmap_has_six_letters() {
        let b = usenix_bitmap();
        assert_eq!(b.len(), 36);
        assert!(b.iter().all(|w| w & 0xF == 0 && w >> 60 == 0));
        assert_eq!(b[5], 0);
        // left stroke of the U covers the top six rows
        assert_eq!(b[0], 0x000F_FFFF_FFFF_FFF0);
    }

    #[test]
    fn preamble_is_balanced() {
        assert_eq!(DEFAULT_PREAMBLE.count_ones(), 32);
    }
}
