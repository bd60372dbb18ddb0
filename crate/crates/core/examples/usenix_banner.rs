//! Sends the "Usenix" bitmap over the covert channel on a small cache and
//! prints the received frames as ASCII art, one text row per lane.

use llc_lab_core::covert::{measure_channel, pack_frames, unpack_frames, usenix_bitmap, ChannelConfig, LANES};
use llc_lab_core::evset::{profile_cache, ProfilingConfig};
use llc_lab_core::memsim::{CacheConfig, Machine};
use llc_lab_core::workload::Idle;

fn main() {
    let cfg = CacheConfig { num_sets: 1024, frame_pool: 1 << 14, ..CacheConfig::with_seed(1) };
    let mut m = Machine::new(cfg).expect("valid config");
    let pc = ProfilingConfig { buffer_size: 1 << 20, stall_limit: 32, max_buffers: 6, ..Default::default() };
    let cat = profile_cache(&pc, &mut m).expect("profiling");

    let frames = usenix_bitmap();
    let bits = unpack_frames(&frames, frames.len() * LANES);
    let r = measure_channel(&bits, &ChannelConfig::host_to_host(), &cat, &mut Idle, &mut m).expect("channel");
    let got = pack_frames(&r.received);
    for lane in 0..LANES {
        let row: String = got.iter().map(|w| if w >> lane & 1 == 1 { '#' } else { ' ' }).collect();
        println!("{}", row.trim_end());
    }
    eprintln!("{} bits, {} errors, {:.0} bit/s", r.payload_bits, r.bit_errors, r.bandwidth_bps);
}
