use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const PAGE_SIZE: u64 = 4096;
pub const PAGE_SHIFT: u32 = 12;

/// First virtual address handed out by the allocator.
pub const VA_BASE: u64 = 0x7f00_0000_0000;

const UNMAPPED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VirtAddr(pub u64);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhysAddr(pub u64);

impl VirtAddr {
    pub const fn page_offset(self) -> u64 {
        self.0 & (PAGE_SIZE - 1)
    }

    pub const fn page_base(self) -> VirtAddr {
        VirtAddr(self.0 & !(PAGE_SIZE - 1))
    }

    pub const fn add(self, bytes: u64) -> VirtAddr {
        VirtAddr(self.0 + bytes)
    }
}

impl fmt::LowerHex for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

impl fmt::LowerHex for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemError {
    Unmapped(VirtAddr),
    OutOfFrames { requested: u64, available: u64 },
    ZeroSize,
}

impl fmt::Display for MemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemError::Unmapped(va) => write!(f, "virtual address {:#x} is not mapped", va.0),
            MemError::OutOfFrames { requested, available } => {
                write!(f, "out of physical frames: requested {requested}, {available} left")
            }
            MemError::ZeroSize => f.write_str("allocation size must be positive"),
        }
    }
}

impl core::error::Error for MemError {}

/// A contiguous, page-aligned virtual allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Buffer {
    pub base: VirtAddr,
    pub pages: u64,
}

impl Buffer {
    pub fn len(&self) -> u64 {
        self.pages * PAGE_SIZE
    }

    pub fn is_empty(&self) -> bool {
        self.pages == 0
    }

    pub fn page(&self, i: u64) -> VirtAddr {
        debug_assert!(i < self.pages);
        self.base.add(i * PAGE_SIZE)
    }

    pub fn page_addrs(&self) -> impl Iterator<Item = VirtAddr> + '_ {
        (0..self.pages).map(move |i| self.page(i))
    }
}

/// Virtual pages backed by pseudo-randomly chosen physical frames.
///
/// Virtual pages are handed out contiguously from [`VA_BASE`] with one
/// unmapped guard page after every allocation, so the page table is a flat
/// vector indexed by virtual page number.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    table: Vec<u32>,
    used: Vec<u64>,
    free_frames: u64,
    frame_pool: u64,
}

impl AddressSpace {
    pub fn new(frame_pool: u64) -> Self {
        Self {
            table: Vec::new(),
            used: alloc::vec![0; frame_pool.div_ceil(64) as usize],
            free_frames: frame_pool,
            frame_pool,
        }
    }

    pub fn free_frames(&self) -> u64 {
        self.free_frames
    }

    pub fn mapped_pages(&self) -> u64 {
        self.table.iter().filter(|&&f| f != UNMAPPED).count() as u64
    }

    fn is_used(&self, frame: u64) -> bool {
        self.used[(frame / 64) as usize] >> (frame % 64) & 1 == 1
    }

    fn mark_used(&mut self, frame: u64) {
        self.used[(frame / 64) as usize] |= 1 << (frame % 64);
        self.free_frames -= 1;
    }

    fn pick_frames(
        &mut self,
        n: u64,
        rng: &mut ChaCha8Rng,
        pred: &mut dyn FnMut(u64) -> bool,
        filtered: bool,
    ) -> Result<Vec<u32>, MemError> {
        let mut out = Vec::with_capacity(n as usize);
        if !filtered && n.saturating_mul(2) <= self.free_frames {
            // Plenty of room: rejection sampling is exact and cheap.
            while (out.len() as u64) < n {
                let f = rng.random_range(0..self.frame_pool);
                if !self.is_used(f) {
                    self.mark_used(f);
                    out.push(f as u32);
                }
            }
            return Ok(out);
        }
        let mut free: Vec<u32> =
            (0..self.frame_pool).filter(|&f| !self.is_used(f) && pred(f)).map(|f| f as u32).collect();
        if (free.len() as u64) < n {
            return Err(MemError::OutOfFrames { requested: n, available: free.len() as u64 });
        }
        for i in 0..n as usize {
            let j = rng.random_range(i..free.len());
            free.swap(i, j);
            self.mark_used(free[i] as u64);
            out.push(free[i]);
        }
        Ok(out)
    }

    fn map_frames(&mut self, frames: Vec<u32>) -> Buffer {
        let base = VirtAddr(VA_BASE + (self.table.len() as u64) * PAGE_SIZE);
        let pages = frames.len() as u64;
        self.table.extend(frames);
        self.table.push(UNMAPPED);
        Buffer { base, pages }
    }

    pub fn allocate(&mut self, size: u64, rng: &mut ChaCha8Rng) -> Result<Buffer, MemError> {
        if size == 0 {
            return Err(MemError::ZeroSize);
        }
        let n = size.div_ceil(PAGE_SIZE);
        let frames = self.pick_frames(n, rng, &mut |_| true, false)?;
        Ok(self.map_frames(frames))
    }

    /// Allocates pages whose frame numbers satisfy `pred`. Only meant for
    /// white-box experiments that need pages of a particular colour.
    pub fn allocate_where(
        &mut self,
        size: u64,
        rng: &mut ChaCha8Rng,
        mut pred: impl FnMut(u64) -> bool,
    ) -> Result<Buffer, MemError> {
        if size == 0 {
            return Err(MemError::ZeroSize);
        }
        let n = size.div_ceil(PAGE_SIZE);
        let frames = self.pick_frames(n, rng, &mut pred, true)?;
        Ok(self.map_frames(frames))
    }

    #[inline]
    pub fn frame_of(&self, va: VirtAddr) -> Result<u64, MemError> {
        let vpn = va.0.wrapping_sub(VA_BASE) >> PAGE_SHIFT;
        match self.table.get(vpn as usize) {
            Some(&f) if f != UNMAPPED && va.0 >= VA_BASE => Ok(f as u64),
            _ => Err(MemError::Unmapped(va)),
        }
    }

    #[inline]
    pub fn translate(&self, va: VirtAddr) -> Result<PhysAddr, MemError> {
        Ok(PhysAddr((self.frame_of(va)? << PAGE_SHIFT) | va.page_offset()))
    }

    /// All (virtual page, frame) pairs currently mapped, in address order.
    pub fn page_table(&self) -> impl Iterator<Item = (VirtAddr, u64)> + '_ {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != UNMAPPED)
            .map(|(i, &f)| (VirtAddr(VA_BASE + i as u64 * PAGE_SIZE), f as u64))
    }
}
