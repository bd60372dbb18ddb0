//! Physical address to cache set mapping.
//!
//! The low address bits select the byte within a line, the next bits are
//! copied directly into the set index, and the remaining high bits are
//! hashed into the slice bits that form the top of the index. For the
//! default 8192-set geometry that is bits 5..0 ignored, bits 16..6 copied
//! and bits 63..17 hashed into two bits.

use super::config::{CacheConfig, SliceHash};

const fn mask_from_bits(bits: &[u32], base: u32) -> u64 {
    let mut mask = 0;
    let mut i = 0;
    while i < bits.len() {
        mask |= 1 << (bits[i] - base);
        i += 1;
    }
    mask
}

/// Address bits (>= 17) feeding the first slice parity on four-slice
/// Intel parts, per Maurice et al., "Reverse Engineering Intel Last-Level
/// Cache Complex Addressing Using Performance Counters" (RAID 2015).
/// Bit 0 of the mask is the first bit above the directly mapped field.
pub const XOR_MASK_0: u64 = mask_from_bits(&[17, 18, 20, 22, 24, 25, 26, 27, 28, 30, 32, 33, 35, 36], 17);
/// Address bits (>= 17) feeding the second slice parity.
pub const XOR_MASK_1: u64 = mask_from_bits(&[17, 19, 20, 21, 22, 23, 24, 26, 28, 29, 31, 33, 34, 35, 37], 17);

/// Hash of the high address bits; `upper` is the address shifted so that
/// its bit 0 is the first bit above the directly mapped index field.
#[inline]
pub fn slice_hash(upper: u64, hash: SliceHash) -> u64 {
    match hash {
        SliceHash::Xor => {
            let h0 = ((upper & XOR_MASK_0).count_ones() & 1) as u64;
            let h1 = ((upper & XOR_MASK_1).count_ones() & 1) as u64;
            h0 | (h1 << 1)
        }
        SliceHash::Identity => upper & 0b11,
        SliceHash::None => 0,
    }
}

/// Precomputed shifts and masks for one geometry.
#[derive(Clone, Copy, Debug)]
pub struct SetMapper {
    line_shift: u32,
    low_bits: u32,
    low_mask: u64,
    hash: SliceHash,
}

impl SetMapper {
    pub fn new(config: &CacheConfig) -> Self {
        let index_bits = config.num_sets.trailing_zeros();
        let low_bits = index_bits - config.slice_hash.bits().min(index_bits);
        Self {
            line_shift: config.line_size.trailing_zeros(),
            low_bits,
            low_mask: (1u64 << low_bits) - 1,
            hash: config.slice_hash,
        }
    }

    #[inline]
    pub fn index(&self, paddr: u64) -> usize {
        let line = paddr >> self.line_shift;
        let low = line & self.low_mask;
        let upper = line >> self.low_bits;
        (low | (slice_hash(upper, self.hash) << self.low_bits)) as usize
    }

    /// Width of the directly mapped part of the index.
    pub fn low_bits(&self) -> u32 {
        self.low_bits
    }

    pub fn line_shift(&self) -> u32 {
        self.line_shift
    }
}

/// Cache set index of a physical address.
pub fn set_index(paddr: u64, config: &CacheConfig) -> usize {
    SetMapper::new(config).index(paddr)
}
