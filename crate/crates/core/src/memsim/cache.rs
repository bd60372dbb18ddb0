use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::Replacement;

/// Resident line tags of every set, most recently used first.
///
/// Tags are physical line numbers (`paddr >> log2(line_size)`). Storage is
/// one flat `num_sets * ways` array plus a fill count per set.
#[derive(Clone, Debug)]
pub struct CacheState {
    ways: usize,
    tags: Vec<u64>,
    lens: Vec<u8>,
}

impl CacheState {
    pub fn new(num_sets: usize, ways: usize) -> Self {
        Self { ways, tags: vec![0; num_sets * ways], lens: vec![0; num_sets] }
    }

    pub fn num_sets(&self) -> usize {
        self.lens.len()
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    /// Resident tags of `set`, MRU first.
    pub fn set(&self, set: usize) -> &[u64] {
        let base = set * self.ways;
        &self.tags[base..base + self.lens[set] as usize]
    }

    pub fn contains(&self, set: usize, tag: u64) -> bool {
        self.set(set).contains(&tag)
    }

    /// Looks up `tag` in `set`, filling and promoting it to MRU. Returns
    /// whether it was already resident.
    #[inline]
    pub fn access(&mut self, set: usize, tag: u64, replacement: Replacement, rng: &mut ChaCha8Rng) -> bool {
        let base = set * self.ways;
        let len = self.lens[set] as usize;
        let lines = &mut self.tags[base..base + self.ways];
        if let Some(pos) = lines[..len].iter().position(|&t| t == tag) {
            lines[..=pos].rotate_right(1);
            return true;
        }
        if len < self.ways {
            lines[..=len].rotate_right(1);
            lines[0] = tag;
            self.lens[set] += 1;
        } else {
            let victim = match replacement {
                Replacement::Lru => self.ways - 1,
                Replacement::Random => rng.random_range(0..self.ways),
            };
            lines[..=victim].rotate_right(1);
            lines[0] = tag;
        }
        false
    }

    pub fn clear(&mut self) {
        self.lens.fill(0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn lru(cache: &mut CacheState, set: usize, tag: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        cache.access(set, tag, Replacement::Lru, &mut rng)
    }

    #[test]
    fn mru_ordering() {
        let mut c = CacheState::new(4, 3);
        assert!(!lru(&mut c, 1, 10));
        assert!(!lru(&mut c, 1, 11));
        assert!(!lru(&mut c, 1, 12));
        assert_eq!(c.set(1), &[12, 11, 10]);
        assert!(lru(&mut c, 1, 10));
        assert_eq!(c.set(1), &[10, 12, 11]);
        assert!(!lru(&mut c, 1, 13));
        assert_eq!(c.set(1), &[13, 10, 12]);
        assert!(c.set(0).is_empty());
    }

    #[test]
    fn random_replacement_keeps_set_full_and_unique() {
        let mut c = CacheState::new(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 0..100u64 {
            c.access(0, t % 9, Replacement::Random, &mut rng);
            let s = c.set(0);
            assert!(s.len() <= 4);
            assert_eq!(s[0], t % 9);
            for i in 0..s.len() {
                assert!(!s[i + 1..].contains(&s[i]));
            }
        }
    }
}
