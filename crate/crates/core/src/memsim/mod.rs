//! The simulated machine: address translation, a single-level inclusive
//! LLC and a virtual clock read through a quantized timer.
//!
//! Time is kept internally in picoseconds so that sub-nanosecond jitter
//! accumulates correctly; every value returned to callers is in
//! nanoseconds and, for timestamps, a multiple of the timer resolution.

mod cache;
mod config;
mod mapping;
mod space;

pub use cache::CacheState;
pub use config::{CacheConfig, ConfigError, Replacement, SliceHash};
pub use mapping::{set_index, slice_hash, SetMapper, XOR_MASK_0, XOR_MASK_1};
pub use space::{AddressSpace, Buffer, MemError, PhysAddr, VirtAddr, PAGE_SHIFT, PAGE_SIZE, VA_BASE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const PS: u64 = 1000;

const STREAM_ALLOC: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_REPLACEMENT: u64 = 3;
const STREAM_FORK_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One timed access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    /// Cache latency before noise and quantization.
    pub raw_latency: u64,
    /// Difference of the quantized timestamps taken around the access.
    pub observed_latency: u64,
    pub hit: bool,
}

#[derive(Clone, Debug)]
pub struct Machine {
    config: CacheConfig,
    mapper: SetMapper,
    cache: CacheState,
    space: AddressSpace,
    clock_ps: u64,
    accesses: u64,
    noise: Option<Normal<f64>>,
    alloc_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    repl_rng: ChaCha8Rng,
    forks: u64,
}

impl Machine {
    pub fn new(config: CacheConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let seed = config.rng_seed;
        Ok(Self {
            mapper: SetMapper::new(&config),
            cache: CacheState::new(config.num_sets, config.ways),
            space: AddressSpace::new(config.frame_pool),
            clock_ps: 0,
            accesses: 0,
            noise: noise_dist(config.jitter_stddev),
            alloc_rng: stream_rng(seed, STREAM_ALLOC),
            noise_rng: stream_rng(seed, STREAM_NOISE),
            repl_rng: stream_rng(seed, STREAM_REPLACEMENT),
            forks: 0,
            config,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn space(&self) -> &AddressSpace {
        &self.space
    }

    /// Replaces the timer model, keeping cache contents and the clock.
    pub fn set_timer(&mut self, resolution: u64, jitter_stddev: f64) -> Result<(), ConfigError> {
        let mut next = self.config.clone();
        next.timer_resolution = resolution;
        next.jitter_stddev = jitter_stddev;
        next.validate()?;
        self.noise = noise_dist(jitter_stddev);
        self.config = next;
        Ok(())
    }

    /// Re-seeds every random stream. Used to derive independent trials from
    /// a cloned machine.
    pub fn reseed(&mut self, seed: u64) {
        self.config.rng_seed = seed;
        self.alloc_rng = stream_rng(seed, STREAM_ALLOC);
        self.noise_rng = stream_rng(seed, STREAM_NOISE);
        self.repl_rng = stream_rng(seed, STREAM_REPLACEMENT);
        self.forks = 0;
    }

    /// A new deterministic random stream derived from the machine seed.
    pub fn fresh_rng(&mut self) -> ChaCha8Rng {
        self.forks += 1;
        stream_rng(self.config.rng_seed, STREAM_FORK_BASE + self.forks)
    }

    pub fn allocate(&mut self, size: u64) -> Result<Buffer, MemError> {
        self.space.allocate(size, &mut self.alloc_rng)
    }

    /// Allocates pages whose physical frame number satisfies `pred`.
    pub fn allocate_where(&mut self, size: u64, pred: impl FnMut(u64) -> bool) -> Result<Buffer, MemError> {
        self.space.allocate_where(size, &mut self.alloc_rng, pred)
    }

    pub fn translate(&self, va: VirtAddr) -> Result<PhysAddr, MemError> {
        self.space.translate(va)
    }

    /// Set index an address maps to. White-box: the attack code never
    /// calls this.
    pub fn set_of(&self, va: VirtAddr) -> Result<usize, MemError> {
        Ok(self.mapper.index(self.space.translate(va)?.0))
    }

    pub fn is_resident(&self, va: VirtAddr) -> Result<bool, MemError> {
        let pa = self.space.translate(va)?.0;
        Ok(self.cache.contains(self.mapper.index(pa), pa >> self.mapper.line_shift()))
    }

    /// Empties the cache.
    pub fn flush_all(&mut self) {
        self.cache.clear();
    }

    #[inline]
    fn lookup(&mut self, va: VirtAddr) -> Result<bool, MemError> {
        let pa = self.space.translate(va)?.0;
        let set = self.mapper.index(pa);
        Ok(self.cache.access(set, pa >> self.mapper.line_shift(), self.config.replacement, &mut self.repl_rng))
    }

    #[inline]
    fn latency_ps(&mut self, hit: bool) -> (u64, u64) {
        let raw = if hit { self.config.hit_latency } else { self.config.miss_latency };
        let ps = match &self.noise {
            None => raw * PS,
            Some(n) => {
                let v = (raw as f64 + n.sample(&mut self.noise_rng)) * PS as f64;
                if v > 0.0 {
                    v as u64
                } else {
                    0
                }
            }
        };
        (raw, ps)
    }

    /// A timed access as seen by code that reads the timer immediately
    /// before and after the load.
    pub fn access(&mut self, va: VirtAddr) -> Result<LatencySample, MemError> {
        let hit = self.lookup(va)?;
        self.accesses += 1;
        self.clock_ps += self.config.op_overhead * PS;
        let before = self.now();
        let (raw, ps) = self.latency_ps(hit);
        self.clock_ps += ps;
        Ok(LatencySample { raw_latency: raw, observed_latency: self.now() - before, hit })
    }

    /// An untimed load by the measuring thread: advances the clock but
    /// takes no timestamp. Returns whether it hit.
    #[inline]
    pub fn step(&mut self, va: VirtAddr) -> Result<bool, MemError> {
        let hit = self.lookup(va)?;
        self.accesses += 1;
        let (_, ps) = self.latency_ps(hit);
        self.clock_ps += self.config.op_overhead * PS + ps;
        Ok(hit)
    }

    /// Steps through `addrs` in order, returning the number of misses.
    pub fn traverse(&mut self, addrs: &[VirtAddr]) -> Result<usize, MemError> {
        let mut misses = 0;
        for &va in addrs {
            misses += usize::from(!self.step(va)?);
        }
        Ok(misses)
    }

    pub fn traverse_rev(&mut self, addrs: &[VirtAddr]) -> Result<usize, MemError> {
        let mut misses = 0;
        for &va in addrs.iter().rev() {
            misses += usize::from(!self.step(va)?);
        }
        Ok(misses)
    }

    /// A load issued by another actor (a different core or process). It
    /// changes cache state but consumes none of this thread's time.
    #[inline]
    pub fn touch(&mut self, va: VirtAddr) -> Result<bool, MemError> {
        self.lookup(va)
    }

    /// Quantized timestamp in nanoseconds.
    #[inline]
    pub fn now(&self) -> u64 {
        let res = self.config.timer_resolution;
        self.clock_ps / (res * PS) * res
    }

    /// Exact simulated time in nanoseconds (white-box).
    pub fn clock_ns(&self) -> u64 {
        self.clock_ps / PS
    }

    pub fn advance(&mut self, ns: u64) {
        self.clock_ps += ns * PS;
    }

    /// Idles until the exact clock reaches `ns`.
    pub fn wait_until(&mut self, ns: u64) {
        self.clock_ps = self.clock_ps.max(ns * PS);
    }

    /// Spins on the timer, one overhead-sized poll at a time, until its
    /// value changes. Afterwards the clock sits just past a tick edge.
    pub fn wait_for_tick(&mut self) {
        let res_ps = self.config.timer_resolution * PS;
        let edge = (self.clock_ps / res_ps + 1) * res_ps;
        let poll = (self.config.op_overhead * PS).max(1);
        let polls = (edge - self.clock_ps).div_ceil(poll);
        self.clock_ps += polls * poll;
    }

    /// Number of loads issued by the measuring thread so far.
    pub fn access_count(&self) -> u64 {
        self.accesses
    }

    /// Runs `f` between two timestamps and returns their difference.
    pub fn timed<E>(&mut self, f: impl FnOnce(&mut Machine) -> Result<(), E>) -> Result<u64, E> {
        let t0 = self.now();
        f(self)?;
        Ok(self.now() - t0)
    }
}

fn noise_dist(stddev: f64) -> Option<Normal<f64>> {
    if stddev > 0.0 {
        Normal::new(0.0, stddev).ok()
    } else {
        None
    }
}
