#![allow(dead_code)]

use llc_lab_core::evset::{profile_cache, EvictionSetCatalog, ProfilingConfig};
use llc_lab_core::memsim::{CacheConfig, Machine};

/// 1024 sets x 12 ways: 16 page colours, so whole-cache runs stay cheap.
pub fn small(seed: u64) -> CacheConfig {
    CacheConfig { num_sets: 1024, frame_pool: 1 << 14, ..CacheConfig::with_seed(seed) }
}

pub fn small_profiling() -> ProfilingConfig {
    ProfilingConfig { buffer_size: 1 << 20, stall_limit: 32, max_buffers: 6, ..Default::default() }
}

pub fn profiled_small(seed: u64) -> (Machine, EvictionSetCatalog) {
    let mut m = Machine::new(small(seed)).unwrap();
    let cat = profile_cache(&small_profiling(), &mut m).unwrap();
    (m, cat)
}

/// Upper bit lists of the two slice parities, as absolute address bits.
pub const SLICE_BITS_0: [u32; 14] = [17, 18, 20, 22, 24, 25, 26, 27, 28, 30, 32, 33, 35, 36];
pub const SLICE_BITS_1: [u32; 15] = [17, 19, 20, 21, 22, 23, 24, 26, 28, 29, 31, 33, 34, 35, 37];

fn bit(a: u64, i: u32) -> u64 {
    (a >> i) & 1
}

/// Bit-by-bit reference for the default 8192-set geometry.
pub fn reference_set_index(addr: u64) -> usize {
    let mut low = 0u64;
    for i in 6..=16 {
        low |= bit(addr, i) << (i - 6);
    }
    let h0 = SLICE_BITS_0.iter().fold(0, |p, &i| p ^ bit(addr, i));
    let h1 = SLICE_BITS_1.iter().fold(0, |p, &i| p ^ bit(addr, i));
    (low | h0 << 11 | h1 << 12) as usize
}
