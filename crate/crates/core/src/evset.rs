//! Eviction-set construction from unprivileged memory accesses.
//!
//! Nothing here reads physical addresses or set indices: sets are found
//! purely by timing a victim line against groups of candidate lines that
//! share its page offset. The white-box helpers at the bottom exist for
//! tests and reports.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::error::Error;
use crate::memsim::{Machine, MemError, VirtAddr, PAGE_SIZE};

/// Lines per 4 KiB page with 64-byte lines.
pub const FRAME_LINES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ProfilingConfig {
    /// Maximum passes of the reduction loop.
    pub k: u32,
    /// Minimum latency drop, in ns per measurement, that marks a page as
    /// necessary for eviction.
    pub thres: u64,
    /// Victim accesses summed per measurement.
    pub amplification: u32,
    pub buffer_size: u64,
    /// Maximum number of timed or untimed loads; `None` is unlimited.
    pub budget: Option<u64>,
    /// Stop once this many sets are catalogued.
    pub target_sets: Option<usize>,
    /// Candidate buffers the profiler may allocate in total.
    pub max_buffers: u32,
    /// Consecutive victims without a new set before another buffer is
    /// allocated (or, with no buffers left, profiling stops).
    pub stall_limit: u32,
    /// Drop the pages of each found set from later candidate pools. Faster,
    /// but later sets then get cheaper as the pool shrinks.
    pub prune_found: bool,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        Self {
            k: 4,
            thres: 25,
            amplification: 1,
            buffer_size: 8 << 20,
            budget: None,
            target_sets: None,
            max_buffers: 4,
            stall_limit: 256,
            prune_found: false,
        }
    }
}

impl ProfilingConfig {
    pub fn from_calibration(cal: &Calibration) -> Self {
        Self { thres: libm::round(cal.margin).max(1.0) as u64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1"));
        }
        if self.thres == 0 {
            return Err(Error::InvalidArgument("thres must be positive"));
        }
        if self.amplification == 0 {
            return Err(Error::InvalidArgument("amplification must be at least 1"));
        }
        if self.buffer_size < PAGE_SIZE {
            return Err(Error::InvalidArgument("buffer_size must be at least one page"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SetStatus {
    /// Found by the reduction loop.
    Profiled,
    /// Derived from a profiled set and confirmed by a thrash test.
    Verified,
}

/// Lines that together evict the `witness` line. The hardware set they
/// share is not recorded.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvictionSet {
    pub members: Vec<VirtAddr>,
    pub witness: VirtAddr,
    /// Which of the 64 line offsets of a page the members sit at.
    pub offset_index: u8,
    pub status: SetStatus,
}

impl EvictionSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The same pages at another line offset.
    pub fn at_offset(&self, offset_index: u8, line: u64) -> EvictionSet {
        let shift = |a: VirtAddr| a.page_base().add(offset_index as u64 * line);
        EvictionSet {
            members: self.members.iter().map(|&a| shift(a)).collect(),
            witness: shift(self.witness),
            offset_index,
            status: SetStatus::Verified,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoveragePoint {
    pub ops: u64,
    pub coverage: f64,
}

/// The eviction sets discovered from one victim page: index `i` of
/// `sets` is the catalog entry at line offset `i`, if it was accepted.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrameGroup {
    pub sets: Vec<Option<usize>>,
}

impl FrameGroup {
    pub fn is_complete(&self) -> bool {
        self.sets.iter().all(Option::is_some)
    }

    /// Catalog indices in lane order, if every offset is present.
    pub fn lanes(&self) -> Option<Vec<usize>> {
        self.sets.iter().copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProfileStats {
    pub victims: u64,
    pub owned_victims: u64,
    pub failures: u64,
    pub buffers: u32,
    pub ops: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvictionSetCatalog {
    pub num_sets: usize,
    pub sets: Vec<EvictionSet>,
    pub frames: Vec<FrameGroup>,
    /// `(frame, offset_index)` pairs whose expansion failed verification.
    pub rejected: Vec<(usize, u8)>,
    pub curve: Vec<CoveragePoint>,
    pub stats: ProfileStats,
}

impl EvictionSetCatalog {
    pub fn new(num_sets: usize) -> Self {
        Self { num_sets, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        if self.num_sets == 0 {
            0.0
        } else {
            (self.sets.len() as f64 / self.num_sets as f64).min(1.0)
        }
    }

    /// Adds one frame's worth of sets, keeping lane order.
    pub fn push_frame(&mut self, sets: Vec<EvictionSet>, rejected: &[u8]) {
        let frame = self.frames.len();
        let mut group = FrameGroup { sets: vec![None; FRAME_LINES] };
        for s in sets {
            group.sets[s.offset_index as usize] = Some(self.sets.len());
            self.sets.push(s);
        }
        self.rejected.extend(rejected.iter().map(|&o| (frame, o)));
        self.frames.push(group);
    }

    /// Frame groups with all 64 offsets present.
    pub fn complete_frames(&self) -> impl Iterator<Item = (usize, Vec<usize>)> + '_ {
        self.frames.iter().enumerate().filter_map(|(i, g)| g.lanes().map(|l| (i, l)))
    }

    /// The first `n` sets in catalog order.
    pub fn first(&self, n: usize) -> Vec<usize> {
        (0..n.min(self.sets.len())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProfileFailure {
    /// The whole candidate pool does not evict the victim.
    NotEvicting,
    /// The reduction did not converge to exactly one set's worth of lines.
    WrongSize {
        size: usize,
    },
    BudgetExhausted,
    Memory(MemError),
}

impl From<MemError> for ProfileFailure {
    fn from(e: MemError) -> Self {
        ProfileFailure::Memory(e)
    }
}

impl fmt::Display for ProfileFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileFailure::NotEvicting => f.write_str("candidate pool does not evict the victim"),
            ProfileFailure::WrongSize { size } => write!(f, "reduced set has {size} lines"),
            ProfileFailure::BudgetExhausted => f.write_str("access budget exhausted"),
            ProfileFailure::Memory(e) => write!(f, "{e}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Calibration

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatencyStats {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, stddev: libm::sqrt(var), min, max, samples }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Calibration {
    /// Per-access latency of a warm line.
    pub hit: LatencyStats,
    /// Per-access latency of a line whose set was just thrashed.
    pub miss: LatencyStats,
    /// Midpoint of the two means; a single access above it is a miss.
    pub threshold: f64,
    /// Half the gap between the means: the smallest latency increase that
    /// is attributed to one extra miss.
    pub margin: f64,
    /// Fraction of all samples on the wrong side of `threshold`.
    pub misclassification: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct CalibrationConfig {
    pub samples: usize,
    pub amplification: u32,
    pub max_misclassification_permille: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { samples: 1000, amplification: 1, max_misclassification_permille: 200 }
    }
}

pub fn calibrate_threshold(m: &mut Machine) -> Result<Calibration, Error> {
    calibrate_with(m, &CalibrationConfig::default())
}

/// Measures warm and thrashed access latencies of one line.
///
/// The line's set is thrashed by walking every page of a scratch buffer at
/// the line's page offset; the buffer holds four times as many pages per
/// page colour as the cache has ways, so the walk evicts it with
/// overwhelming probability without knowing its set.
pub fn calibrate_with(m: &mut Machine, cfg: &CalibrationConfig) -> Result<Calibration, Error> {
    if cfg.samples == 0 || cfg.amplification == 0 {
        return Err(Error::InvalidArgument("calibration needs samples and amplification"));
    }
    let c = m.config();
    let colours = (c.num_sets as u64 * c.line_size / PAGE_SIZE).max(1);
    let pages = 4 * colours * c.ways as u64;
    let victim = m.allocate(PAGE_SIZE)?.base;
    let scratch = m.allocate(pages * PAGE_SIZE)?;
    let thrash: Vec<VirtAddr> = scratch.page_addrs().collect();
    let r = cfg.amplification as u64;

    let mut hit = Vec::with_capacity(cfg.samples);
    let mut miss = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        m.step(victim)?;
        let mut total = 0;
        for _ in 0..r {
            total += m.access(victim)?.observed_latency;
        }
        hit.push(total as f64 / r as f64);

        let mut total = 0;
        for _ in 0..r {
            m.traverse(&thrash)?;
            total += m.access(victim)?.observed_latency;
        }
        miss.push(total as f64 / r as f64);
    }
    let hit = LatencyStats::from_samples(hit);
    let miss = LatencyStats::from_samples(miss);
    let threshold = (hit.mean + miss.mean) / 2.0;
    let wrong = hit.samples.iter().filter(|&&s| s > threshold).count()
        + miss.samples.iter().filter(|&&s| s <= threshold).count();
    let misclassification = wrong as f64 / (2 * cfg.samples) as f64;
    if misclassification * 1000.0 > cfg.max_misclassification_permille as f64 {
        return Err(Error::CalibrationFailed { misclassification });
    }
    Ok(Calibration { margin: (miss.mean - hit.mean) / 2.0, hit, miss, threshold, misclassification })
}

// ---------------------------------------------------------------------------
// Reduction

struct Meter<'a> {
    m: &'a mut Machine,
    reps: u32,
    stop_at: u64,
}

impl Meter<'_> {
    fn check_budget(&self) -> Result<(), ProfileFailure> {
        if self.m.access_count() >= self.stop_at {
            Err(ProfileFailure::BudgetExhausted)
        } else {
            Ok(())
        }
    }

    /// Total victim latency over `reps` rounds of walking `chain` (with the
    /// element at `skip` left out) and then loading the victim.
    fn evict_time(&mut self, chain: &[VirtAddr], skip: Option<usize>, victim: VirtAddr) -> Result<u64, ProfileFailure> {
        self.check_budget()?;
        let mut total = 0;
        for _ in 0..self.reps {
            match skip {
                Some(i) => {
                    self.m.traverse(&chain[..i])?;
                    self.m.traverse(&chain[i + 1..])?;
                }
                None => {
                    self.m.traverse(chain)?;
                }
            }
            total += self.m.access(victim)?.observed_latency;
        }
        Ok(total)
    }

    fn warm_time(&mut self, victim: VirtAddr) -> Result<u64, ProfileFailure> {
        self.m.step(victim)?;
        let mut total = 0;
        for _ in 0..self.reps {
            total += self.m.access(victim)?.observed_latency;
        }
        Ok(total)
    }
}

fn budget_end(m: &Machine, cfg: &ProfilingConfig) -> u64 {
    cfg.budget.map_or(u64::MAX, |b| m.access_count().saturating_add(b))
}

/// Reduces `candidate_pages` to the lines that evict `victim`.
///
/// Every candidate is used at the victim's page offset. Each pass walks a
/// shuffled worklist over the current set `S`; for each page `s` the victim
/// is timed after walking `S` (t1) and after walking `S \ {s}` (t2), and
/// `s` is kept only if t1 - t2 exceeds the threshold. Passes stop early
/// once `S` no longer shrinks.
pub fn profile_one_set(
    candidate_pages: &[VirtAddr],
    victim: VirtAddr,
    cfg: &ProfilingConfig,
    m: &mut Machine,
) -> Result<EvictionSet, ProfileFailure> {
    let ways = m.config().ways;
    let offset = victim.page_offset();
    let line = m.config().line_size;
    let mut rng = m.fresh_rng();
    let stop_at = budget_end(m, cfg);
    let mut meter = Meter { m, reps: cfg.amplification, stop_at };
    let thres = cfg.thres * cfg.amplification as u64;

    let mut set: Vec<VirtAddr> =
        candidate_pages.iter().map(|p| p.page_base().add(offset)).filter(|&a| a != victim).collect();

    let warm = meter.warm_time(victim)?;
    let full = meter.evict_time(&set, None, victim)?;
    if full <= warm + thres {
        return Err(ProfileFailure::NotEvicting);
    }

    for _ in 0..cfg.k {
        let before = set.len();
        let mut worklist = set.clone();
        worklist.shuffle(&mut rng);
        for s in worklist {
            let Some(pos) = set.iter().position(|&a| a == s) else {
                continue;
            };
            let t1 = meter.evict_time(&set, None, victim)?;
            let t2 = meter.evict_time(&set, Some(pos), victim)?;
            if t1.saturating_sub(t2) <= thres {
                set.remove(pos);
            }
        }
        if set.len() == before {
            break;
        }
    }

    if set.len() != ways {
        return Err(ProfileFailure::WrongSize { size: set.len() });
    }
    Ok(EvictionSet { members: set, witness: victim, offset_index: (offset / line) as u8, status: SetStatus::Profiled })
}

/// Whether walking `members` evicts `witness`, judged against its warm
/// latency.
pub fn thrash_check(
    members: &[VirtAddr],
    witness: VirtAddr,
    cfg: &ProfilingConfig,
    m: &mut Machine,
) -> Result<bool, MemError> {
    let mut meter = Meter { m, reps: cfg.amplification, stop_at: u64::MAX };
    let thres = cfg.thres * cfg.amplification as u64;
    let unwrap = |r: Result<u64, ProfileFailure>| match r {
        Ok(v) => Ok(v),
        Err(ProfileFailure::Memory(e)) => Err(e),
        Err(_) => unreachable!("unbudgeted meter"),
    };
    let warm = unwrap(meter.warm_time(witness))?;
    let evicted = unwrap(meter.evict_time(members, None, witness))?;
    Ok(evicted > warm + thres)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Expansion {
    pub sets: Vec<EvictionSet>,
    /// Offsets whose derived set failed its thrash check.
    pub rejected: Vec<u8>,
}

/// Derives the sets at the other 63 line offsets of the same pages.
pub fn expand_frame(evset: &EvictionSet, cfg: &ProfilingConfig, m: &mut Machine) -> Result<Expansion, MemError> {
    let line = m.config().line_size;
    let per_page = (PAGE_SIZE / line) as u8;
    let mut out = Expansion::default();
    for j in 0..per_page {
        if j == evset.offset_index {
            continue;
        }
        let cand = evset.at_offset(j, line);
        if thrash_check(&cand.members, cand.witness, cfg, m)? {
            out.sets.push(cand);
        } else {
            out.rejected.push(j);
        }
    }
    Ok(out)
}

/// Whether some catalogued offset-0 set already evicts `victim`.
fn owned(
    catalog: &EvictionSetCatalog,
    victim: VirtAddr,
    cfg: &ProfilingConfig,
    m: &mut Machine,
) -> Result<bool, MemError> {
    let reps = cfg.amplification;
    let thres = cfg.thres * reps as u64;
    let mut meter = Meter { m, reps, stop_at: u64::MAX };
    let err = |e: ProfileFailure| match e {
        ProfileFailure::Memory(e) => e,
        _ => unreachable!("unbudgeted meter"),
    };
    let warm = meter.warm_time(victim).map_err(err)?;
    let off = victim.page_offset() / meter.m.config().line_size;
    for g in &catalog.frames {
        let Some(i) = g.sets.get(off as usize).copied().flatten() else {
            continue;
        };
        let t = meter.evict_time(&catalog.sets[i].members, None, victim).map_err(err)?;
        if t > warm + thres {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Profiles sets until the budget runs out, the target is met, every set
/// is covered, or no further progress is possible.
///
/// Victims are fresh pages, used at offset 0. A victim already evicted by
/// a catalogued set is skipped, and a victim that fails is retried once
/// after the pool next grows. After
/// `stall_limit` victims in a row yield nothing, a further candidate
/// buffer is allocated, up to `max_buffers`.
pub fn profile_cache(cfg: &ProfilingConfig, m: &mut Machine) -> Result<EvictionSetCatalog, Error> {
    cfg.validate()?;
    let num_sets = m.config().num_sets;
    let mut catalog = EvictionSetCatalog::new(num_sets);
    let start = m.access_count();
    let stop_at = budget_end(m, cfg);
    let target = cfg.target_sets.unwrap_or(num_sets).min(num_sets);
    catalog.curve.push(CoveragePoint { ops: 0, coverage: 0.0 });
    if cfg.budget == Some(0) || target == 0 {
        return Ok(catalog);
    }

    let mut pool: Vec<VirtAddr> = Vec::new();
    let grow = |pool: &mut Vec<VirtAddr>, m: &mut Machine, stats: &mut ProfileStats| {
        let buf = m.allocate(cfg.buffer_size)?;
        pool.extend(buf.page_addrs());
        stats.buffers += 1;
        Ok::<(), MemError>(())
    };
    grow(&mut pool, m, &mut catalog.stats)?;

    // Failed victims wait here until the pool grows.
    let mut retry: VecDeque<VirtAddr> = VecDeque::new();
    let mut retry_now = 0usize;
    let mut stalled = 0u32;
    while catalog.len() < target && m.access_count() < stop_at {
        if stalled >= cfg.stall_limit {
            if catalog.stats.buffers >= cfg.max_buffers {
                break;
            }
            grow(&mut pool, m, &mut catalog.stats)?;
            stalled = 0;
            retry_now = retry.len();
        }
        let (victim, retried) = match retry_now {
            0 => (m.allocate(PAGE_SIZE)?.base, false),
            _ => {
                retry_now -= 1;
                (retry.pop_front().expect("counted"), true)
            }
        };
        catalog.stats.victims += 1;
        if owned(&catalog, victim, cfg, m)? {
            catalog.stats.owned_victims += 1;
            stalled += 1;
            continue;
        }
        let mut one = cfg.clone();
        one.budget = Some(stop_at.saturating_sub(m.access_count()));
        match profile_one_set(&pool, victim, &one, m) {
            Ok(set) => {
                let expansion = expand_frame(&set, cfg, m)?;
                if cfg.prune_found {
                    let used: Vec<VirtAddr> = set.members.iter().map(|a| a.page_base()).collect();
                    pool.retain(|p| !used.contains(p));
                }
                let mut sets = vec![set];
                sets.extend(expansion.sets);
                catalog.push_frame(sets, &expansion.rejected);
                catalog.curve.push(CoveragePoint { ops: m.access_count() - start, coverage: catalog.coverage() });
                stalled = 0;
            }
            Err(ProfileFailure::BudgetExhausted) => break,
            Err(ProfileFailure::Memory(e)) => return Err(e.into()),
            Err(_) => {
                catalog.stats.failures += 1;
                if !retried {
                    retry.push_back(victim);
                }
                stalled += 1;
            }
        }
    }
    catalog.stats.ops = m.access_count() - start;
    Ok(catalog)
}

// ---------------------------------------------------------------------------
// White-box oracles

/// Whether every member and the witness map to one set.
pub fn same_set_oracle(evset: &EvictionSet, m: &Machine) -> Result<bool, MemError> {
    let target = m.set_of(evset.witness)?;
    for &a in &evset.members {
        if m.set_of(a)? != target {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Hardware set of each catalogue entry.
pub fn catalog_sets(catalog: &EvictionSetCatalog, m: &Machine) -> Result<Vec<usize>, MemError> {
    catalog.sets.iter().map(|s| m.set_of(s.witness)).collect()
}
