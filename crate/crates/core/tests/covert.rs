mod common;

use llc_lab_core::covert::*;
use llc_lab_core::memsim::*;
use llc_lab_core::workload::Idle;
use llc_lab_core::Error;
use proptest::prelude::*;

use common::profiled_small;

#[test]
fn zero_frame_touches_nothing_and_ones_touch_everything() {
    let (mut m, _) = profiled_small(1);
    let cfg = ChannelConfig { copies: 3, ..ChannelConfig::host_to_host() };
    let tx = Transmitter::with_frames(&mut m, &cfg, vec![0, u64::MAX]).unwrap();
    m.flush_all();
    tx.emit(tx.frame_at(1), &mut m).unwrap();
    let lines = |tx: &Transmitter| {
        (0..3).flat_map(|c| (0..64).map(move |l| (c, l))).map(|(c, l)| tx.lane_line(c, l)).collect::<Vec<_>>()
    };
    assert!(lines(&tx).iter().all(|&a| !m.is_resident(a).unwrap()));
    tx.emit(tx.frame_at(2), &mut m).unwrap();
    assert!(lines(&tx).iter().all(|&a| m.is_resident(a).unwrap()));
}

#[test]
fn silent_transmitter_is_not_found() {
    let (mut m, cat) = profiled_small(2);
    let cfg = ChannelConfig::host_to_host();
    let mut actors = Actors { tx: None, ambient: &mut Idle };
    let err = locate_carrier(&cat, &cfg, &mut actors, &mut m).unwrap_err();
    assert_eq!(err, Error::CarrierNotFound { scanned: 16 });
}

#[test]
fn located_lanes_are_the_transmitters_sets() {
    let (mut m, cat) = profiled_small(3);
    let cfg = ChannelConfig { copies: 2, ..ChannelConfig::host_to_host() };
    let tx = Transmitter::new(&mut m, &cfg, &[true; 128]).unwrap();
    let mut actors = Actors { tx: Some(&tx), ambient: &mut Idle };
    let carrier = locate_carrier(&cat, &cfg, &mut actors, &mut m).unwrap();
    let copy = (0..2)
        .find(|&c| m.set_of(tx.lane_line(c, 0)).unwrap() == m.set_of(cat.sets[carrier.lanes[0]].witness).unwrap())
        .expect("carrier is one of the copies");
    for lane in 0..64 {
        let got = m.set_of(cat.sets[carrier.lanes[lane]].witness).unwrap();
        assert_eq!(got, m.set_of(tx.lane_line(copy, lane)).unwrap());
    }
}

#[test]
fn short_period_is_a_config_error() {
    let (mut m, cat) = profiled_small(4);
    let cfg = ChannelConfig { period: 20_000, ..ChannelConfig::host_to_host() };
    let err = measure_channel(&[true; 64], &cfg, &cat, &mut Idle, &mut m).unwrap_err();
    assert!(matches!(err, Error::Config(ConfigError::PeriodTooShort { .. })));
}

#[test]
fn empty_payload_reports_zero() {
    let (mut m, cat) = profiled_small(5);
    let r = measure_channel(&[], &ChannelConfig::host_to_host(), &cat, &mut Idle, &mut m).unwrap();
    assert_eq!((r.bandwidth_bps, r.ber), (0.0, 0.0));
}

#[test]
fn usenix_bitmap_round_trips() {
    let (mut m, cat) = profiled_small(6);
    let cfg = ChannelConfig::host_to_host();
    let frames = usenix_bitmap();
    let bits = unpack_frames(&frames, frames.len() * 64);
    let r = measure_channel(&bits, &cfg, &cat, &mut Idle, &mut m).unwrap();
    assert_eq!(r.bit_errors, 0);
    assert_eq!(pack_frames(&r.received), frames);
}

#[test]
fn more_copies_shorten_the_scan() {
    let (base, cat) = profiled_small(7);
    let mean_scan = |copies: u32| {
        let mut total = 0;
        for trial in 0..200u64 {
            let mut m = base.clone();
            m.reseed(1000 + trial);
            let cfg = ChannelConfig { copies, scan_seed: trial, ..ChannelConfig::host_to_host() };
            let tx = Transmitter::new(&mut m, &cfg, &[true; 64]).unwrap();
            let mut actors = Actors { tx: Some(&tx), ambient: &mut Idle };
            total += locate_carrier(&cat, &cfg, &mut actors, &mut m).unwrap().scanned;
        }
        total as f64 / 200.0
    };
    let one = mean_scan(1);
    let four = mean_scan(4);
    // Sampling without replacement over 16 frames: (16+1)/(c+1) for c
    // distinct carrier colours.
    assert!((one - 8.5).abs() < 1.5, "{one}");
    assert!(four < one);
    assert!(four / one < 0.6, "{four} / {one}");
}

#[test]
fn vm_preset_loopback() {
    let (mut m, cat) = profiled_small(8);
    let bits: Vec<bool> = (0..640).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
    let r = measure_channel(&bits, &ChannelConfig::host_to_vm(), &cat, &mut Idle, &mut m).unwrap();
    assert!(r.ber <= 0.01, "{}", r.ber);
    assert_eq!(r.bandwidth_bps, 8000.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loopback_identity_without_noise(bits in prop::collection::vec(any::<bool>(), 1..700), seed in 0u64..4) {
        let (mut m, cat) = profiled_small(20 + seed);
        let cfg = ChannelConfig::host_to_host();
        m.set_timer(1, 0.0).unwrap();
        let tx = Transmitter::new(&mut m, &cfg, &bits).unwrap();
        let mut actors = Actors { tx: Some(&tx), ambient: &mut Idle };
        let mut carrier = locate_carrier(&cat, &cfg, &mut actors, &mut m).unwrap();
        let got = receive(&mut carrier, bits.len(), &cfg, &mut actors, &mut m).unwrap();
        prop_assert_eq!(got, bits);
    }
}
