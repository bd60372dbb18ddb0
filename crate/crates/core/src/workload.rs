//! Background actors co-scheduled with the measuring thread.
//!
//! A workload is asked once per slot (a capture column, a repetition of a
//! region trigger, a covert-channel period) to perform its accesses. They
//! are issued through [`Machine::touch`], so they change cache state
//! without consuming the measuring thread's time.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::memsim::{set_index, Machine, MemError, VirtAddr, PAGE_SIZE};

pub trait Workload {
    fn step(&mut self, slot: u64, machine: &mut Machine) -> Result<(), MemError>;
}

/// Adapts a closure into a workload.
pub struct FromFn<F>(pub F);

pub fn from_fn<F>(f: F) -> FromFn<F>
where
    F: FnMut(u64, &mut Machine) -> Result<(), MemError>,
{
    FromFn(f)
}

impl<F> Workload for FromFn<F>
where
    F: FnMut(u64, &mut Machine) -> Result<(), MemError>,
{
    fn step(&mut self, slot: u64, machine: &mut Machine) -> Result<(), MemError> {
        (self.0)(slot, machine)
    }
}

impl<W: Workload + ?Sized> Workload for Box<W> {
    fn step(&mut self, slot: u64, machine: &mut Machine) -> Result<(), MemError> {
        (**self).step(slot, machine)
    }
}

impl<W: Workload + ?Sized> Workload for &mut W {
    fn step(&mut self, slot: u64, machine: &mut Machine) -> Result<(), MemError> {
        (**self).step(slot, machine)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Idle;

impl Workload for Idle {
    fn step(&mut self, _: u64, _: &mut Machine) -> Result<(), MemError> {
        Ok(())
    }
}

/// The same accesses every slot.
#[derive(Clone, Debug, Default)]
pub struct Repeating(pub Vec<VirtAddr>);

impl Workload for Repeating {
    fn step(&mut self, _: u64, m: &mut Machine) -> Result<(), MemError> {
        for &a in &self.0 {
            m.touch(a)?;
        }
        Ok(())
    }
}

/// Explicit per-slot access lists; slots without an entry are idle.
#[derive(Clone, Debug, Default)]
pub struct Script {
    events: BTreeMap<u64, Vec<VirtAddr>>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(mut self, slot: u64, addrs: impl IntoIterator<Item = VirtAddr>) -> Self {
        self.events.entry(slot).or_default().extend(addrs);
        self
    }

    /// Slots with at least one access, ascending.
    pub fn active_slots(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter(|(_, v)| !v.is_empty()).map(|(&s, _)| s)
    }
}

impl Workload for Script {
    fn step(&mut self, slot: u64, m: &mut Machine) -> Result<(), MemError> {
        if let Some(addrs) = self.events.get(&slot) {
            for &a in addrs {
                m.touch(a)?;
            }
        }
        Ok(())
    }
}

/// Several workloads stepped in order.
#[derive(Default)]
pub struct Composite(pub Vec<Box<dyn Workload>>);

impl Composite {
    pub fn with(mut self, w: impl Workload + 'static) -> Self {
        self.0.push(Box::new(w));
        self
    }
}

impl Workload for Composite {
    fn step(&mut self, slot: u64, m: &mut Machine) -> Result<(), MemError> {
        for w in &mut self.0 {
            w.step(slot, m)?;
        }
        Ok(())
    }
}

/// Half-open slot interval `[start, end)`.
pub type Interval = (u64, u64);

/// A synthetic activity: inside its scheduled intervals it touches each of
/// its lines with probability `density` per slot.
#[derive(Clone, Debug)]
pub struct ActivityWorkload {
    pub lines: Vec<VirtAddr>,
    pub intervals: Vec<Interval>,
    pub density: f64,
    rng: ChaCha8Rng,
}

impl ActivityWorkload {
    pub fn new(lines: Vec<VirtAddr>, intervals: Vec<Interval>, density: f64, rng: ChaCha8Rng) -> Self {
        Self { lines, intervals, density, rng }
    }

    pub fn is_active(&self, slot: u64) -> bool {
        self.intervals.iter().any(|&(s, e)| (s..e).contains(&slot))
    }
}

impl Workload for ActivityWorkload {
    fn step(&mut self, slot: u64, m: &mut Machine) -> Result<(), MemError> {
        if !self.is_active(slot) {
            return Ok(());
        }
        for &a in &self.lines {
            if self.density >= 1.0 || self.rng.random_bool(self.density.max(0.0)) {
                m.touch(a)?;
            }
        }
        Ok(())
    }
}

/// One fresh line in the same set as each of `targets`, at the same page
/// offset. Used to build victims that collide with monitored sets.
pub fn colliding_lines(m: &mut Machine, targets: &[VirtAddr]) -> Result<Vec<VirtAddr>, MemError> {
    let cfg = m.config().clone();
    targets
        .iter()
        .map(|&t| {
            let set = m.set_of(t)?;
            let off = t.page_offset();
            let page = m.allocate_where(PAGE_SIZE, |f| set_index((f << 12) | off, &cfg) == set)?;
            Ok(page.base.add(off))
        })
        .collect()
}

/// Scripted bursts at seeded random times, for demonstrations.
///
/// Generates `bursts` non-overlapping intervals of `min_len..=max_len`
/// slots inside `[0, slots)`, separated by at least `min_gap` idle slots.
pub fn random_intervals(
    slots: u64,
    bursts: usize,
    min_len: u64,
    max_len: u64,
    min_gap: u64,
    rng: &mut ChaCha8Rng,
) -> Vec<Interval> {
    let mut out = Vec::with_capacity(bursts);
    if bursts == 0 || max_len == 0 {
        return out;
    }
    let stride = slots / bursts as u64;
    for b in 0..bursts as u64 {
        let lo = b * stride + min_gap;
        let hi = (b + 1) * stride;
        if lo >= hi {
            break;
        }
        let room = hi - lo;
        let len = rng.random_range(min_len.min(room)..=max_len.min(room)).max(1);
        let start = lo + rng.random_range(0..=room - len);
        out.push((start, start + len));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memsim::CacheConfig;
    use rand::SeedableRng;

    #[test]
    fn script_touches_only_on_its_slots() {
        let mut m = Machine::new(CacheConfig::default()).unwrap();
        let buf = m.allocate(4096).unwrap();
        let mut s = Script::new().at(3, [buf.base]);
        s.step(2, &mut m).unwrap();
        assert!(!m.is_resident(buf.base).unwrap());
        s.step(3, &mut m).unwrap();
        assert!(m.is_resident(buf.base).unwrap());
        assert_eq!(m.clock_ns(), 0);
    }

    #[test]
    fn intervals_do_not_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let iv = random_intervals(400, 6, 5, 20, 4, &mut rng);
        assert_eq!(iv.len(), 6);
        for w in iv.windows(2) {
            assert!(w[0].1 + 4 <= w[1].0);
        }
        assert!(iv.iter().all(|&(s, e)| s < e && e <= 400));
    }
}
