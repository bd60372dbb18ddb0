mod common;

use std::collections::HashMap;

use llc_lab_core::memsim::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::reference_set_index;

#[test]
fn set_index_examples() {
    let cfg = CacheConfig::default();
    assert_eq!(set_index(0, &cfg), 0);
    assert_eq!(set_index(0x1FC0, &cfg), 127);
    let a = 0xDEA_DBEE_F000;
    assert_eq!(set_index(a, &cfg), reference_set_index(a));
}

#[test]
fn set_index_matches_reference_on_random_addresses() {
    let cfg = CacheConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e7);
    for _ in 0..100_000 {
        let a: u64 = rng.random();
        assert_eq!(set_index(a, &cfg), reference_set_index(a), "{a:#x}");
    }
}

#[test]
fn identity_hash_reads_bits_18_17() {
    let cfg = CacheConfig { slice_hash: SliceHash::Identity, ..CacheConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let a: u64 = rng.random();
        let want = ((a >> 6) & 0x7FF) | ((a >> 17) & 3) << 11;
        assert_eq!(set_index(a, &cfg), want as usize);
    }
}

#[test]
fn translation_preserves_page_offsets() {
    let mut m = Machine::new(CacheConfig::with_seed(3)).unwrap();
    let bufs: Vec<Buffer> = (0..4).map(|_| m.allocate(1 << 20).unwrap()).collect();
    let table: HashMap<u64, u64> = m.space().page_table().map(|(v, f)| (v.0, f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let b = bufs[rng.random_range(0..bufs.len())];
        let va = b.base.add(rng.random_range(0..b.len()));
        let pa = m.translate(va).unwrap();
        assert_eq!(pa.0 & 0xFFF, va.0 & 0xFFF);
        assert_eq!(pa.0 >> 12, table[&va.page_base().0]);
        assert_eq!(m.translate(va).unwrap(), pa);
    }
}

#[test]
fn allocations_are_injective() {
    let mut m = Machine::new(CacheConfig::with_seed(5)).unwrap();
    let a = m.allocate(8 << 20).unwrap();
    let b = m.allocate(8 << 20).unwrap();
    assert_eq!(a.pages, 2048);
    let mut frames: Vec<u64> = m.space().page_table().map(|(_, f)| f).collect();
    assert_eq!(frames.len(), 4096);
    frames.sort_unstable();
    frames.dedup();
    assert_eq!(frames.len(), 4096);
    assert!(m.translate(b.base).is_ok());
    assert_eq!(m.translate(VirtAddr(0x1000)), Err(MemError::Unmapped(VirtAddr(0x1000))));
}

#[test]
fn out_of_frames() {
    let mut m = Machine::new(CacheConfig { frame_pool: 100, ..CacheConfig::default() }).unwrap();
    assert!(matches!(m.allocate(101 * 4096), Err(MemError::OutOfFrames { .. })));
    assert_eq!(m.allocate(0), Err(MemError::ZeroSize));
}

#[test]
fn config_invariants() {
    let c = CacheConfig::default();
    assert_eq!(c.capacity(), 6 << 20);
    assert_eq!(c.miss_latency - c.hit_latency, 50);
    for bad in [
        CacheConfig { num_sets: 1000, ..c.clone() },
        CacheConfig { miss_latency: 60, ..c.clone() },
        CacheConfig { timer_resolution: 0, ..c.clone() },
        CacheConfig { jitter_stddev: -1.0, ..c.clone() },
        CacheConfig { ways: 0, ..c.clone() },
    ] {
        assert!(Machine::new(bad).is_err());
    }
}

/// Lines of `n` distinct pages that all map to one set.
fn conflicting_lines(m: &mut Machine, n: usize) -> Vec<VirtAddr> {
    let buf = m.allocate(64 << 20).unwrap();
    let target = m.set_of(buf.base).unwrap();
    let v: Vec<_> = buf.page_addrs().filter(|&p| m.set_of(p).unwrap() == target).take(n).collect();
    assert_eq!(v.len(), n);
    v
}

#[test]
fn thrashing_misses_every_time() {
    let mut m = Machine::new(CacheConfig::with_seed(6)).unwrap();
    let lines = conflicting_lines(&mut m, 13);
    for round in 0..5 {
        for &l in &lines {
            let hit = m.access(l).unwrap().hit;
            assert!(!hit, "round {round}");
        }
    }
}

#[test]
fn miss_chain_timing() {
    let mut m = Machine::new(CacheConfig::with_seed(7)).unwrap();
    let lines = conflicting_lines(&mut m, 12);
    let t0 = m.now();
    for &l in &lines {
        m.access(l).unwrap();
    }
    assert_eq!(m.now() - t0, 12 * 110 + 12 * 20);
}

#[test]
fn evicted_line_misses_next() {
    let mut m = Machine::new(CacheConfig::with_seed(8)).unwrap();
    let lines = conflicting_lines(&mut m, 13);
    m.access(lines[0]).unwrap();
    m.traverse(&lines[1..]).unwrap();
    assert!(!m.is_resident(lines[0]).unwrap());
    assert!(!m.access(lines[0]).unwrap().hit);
}

#[test]
fn coarse_resolution_timestamps() {
    let mut m = Machine::new(CacheConfig { timer_resolution: 1000, ..CacheConfig::with_seed(9) }).unwrap();
    let buf = m.allocate(1 << 20).unwrap();
    for p in buf.page_addrs() {
        m.access(p).unwrap();
        assert_eq!(m.now() % 1000, 0);
    }
}

#[test]
fn jitter_free_runs_are_deterministic() {
    let run = || {
        let mut m = Machine::new(CacheConfig::with_seed(10)).unwrap();
        let buf = m.allocate(2 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut out = Vec::new();
        for _ in 0..5000 {
            let va = buf.base.add(rng.random_range(0..buf.len()));
            out.push(m.access(va).unwrap().observed_latency);
        }
        (out, m.now())
    };
    assert_eq!(run(), run());
}

/// Independent LRU model: per set, tags with last-use stamps.
struct LruModel {
    ways: usize,
    sets: HashMap<usize, Vec<(u64, u64)>>,
    clock: u64,
}

impl LruModel {
    fn access(&mut self, set: usize, tag: u64) -> bool {
        self.clock += 1;
        let lines = self.sets.entry(set).or_default();
        if let Some(e) = lines.iter_mut().find(|e| e.0 == tag) {
            e.1 = self.clock;
            return true;
        }
        if lines.len() == self.ways {
            let oldest = (0..lines.len()).min_by_key(|&i| lines[i].1).unwrap();
            lines.remove(oldest);
        }
        lines.push((tag, self.clock));
        false
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_matches_lru_model(seed in any::<u64>(), ops in prop::collection::vec((0usize..40, 0u64..64), 1..600)) {
        let cfg = CacheConfig {
            num_sets: 16, ways: 4, slice_hash: SliceHash::None, frame_pool: 256,
            ..CacheConfig::with_seed(seed)
        };
        let mut m = Machine::new(cfg).unwrap();
        let buf = m.allocate(40 * 4096).unwrap();
        let mut model = LruModel { ways: 4, sets: HashMap::new(), clock: 0 };
        for (page, line) in ops {
            let va = buf.page(page as u64).add(line * 64);
            let pa = m.translate(va).unwrap().0;
            let set = ((pa >> 6) & 15) as usize;
            prop_assert_eq!(m.set_of(va).unwrap(), set);
            let hit = m.access(va).unwrap().hit;
            prop_assert_eq!(hit, model.access(set, pa >> 6));
            // residency invariants of the real cache
            let resident = m.cache().set(set);
            prop_assert!(resident.len() <= 4);
            for (i, t) in resident.iter().enumerate() {
                prop_assert!(!resident[i + 1..].contains(t));
                prop_assert_eq!((((t << 6) >> 6) & 15) as usize, set);
            }
        }
    }

    #[test]
    fn set_index_ignores_line_offset(a in any::<u64>(), off in 0u64..64) {
        let cfg = CacheConfig::default();
        prop_assert_eq!(set_index(a & !63, &cfg), set_index((a & !63) | off, &cfg));
    }

    #[test]
    fn clock_is_monotone(seed in any::<u64>(), res in 1u64..5000, n in 1usize..300) {
        let cfg = CacheConfig { timer_resolution: res, jitter_stddev: 5.0, ..CacheConfig::with_seed(seed) };
        let mut m = Machine::new(cfg).unwrap();
        let buf = m.allocate(1 << 16).unwrap();
        let mut last = m.now();
        for i in 0..n {
            m.access(buf.base.add((i as u64 * 4160) % buf.len())).unwrap();
            prop_assert!(m.now() >= last);
            prop_assert_eq!(m.now() % res, 0);
            last = m.now();
        }
    }
}
