mod common;

use llc_lab_core::evset::EvictionSetCatalog;
use llc_lab_core::memsim::*;
use llc_lab_core::probe::Prober;
use llc_lab_core::regions::*;
use llc_lab_core::workload::{Idle, Repeating};
use proptest::prelude::*;

use common::profiled_small;

fn witnesses(cat: &EvictionSetCatalog, idx: &[usize]) -> Vec<VirtAddr> {
    idx.iter().map(|&i| cat.sets[i].witness).collect()
}

#[test]
fn no_op_detects_nothing() {
    let (mut m, cat) = profiled_small(1);
    let mut p = Prober::new(&cat, &cat.first(128)).unwrap();
    let r = identify(&mut p, &mut Idle, &RegionConfig::default(), &mut m).unwrap();
    assert!(r.detected.is_empty());
    assert!(r.deltas.iter().all(|&d| d == 0.0));
}

#[test]
fn constructed_trigger_is_found() {
    let (mut m, cat) = profiled_small(2);
    let mut p = Prober::new(&cat, &cat.first(128)).unwrap();
    let mut w = Repeating(witnesses(&cat, &[5, 17]));
    let r = identify(&mut p, &mut w, &RegionConfig::default(), &mut m).unwrap();
    assert_eq!(r.catalog_indices(&p), vec![5, 17]);
}

#[test]
fn whole_frame_trigger_finds_all_siblings() {
    let (mut m, cat) = profiled_small(3);
    let mut p = Prober::new(&cat, &cat.first(256)).unwrap();
    let target = m.set_of(cat.sets[64].witness.page_base()).unwrap();
    let cfg = m.config().clone();
    let page = m.allocate_where(PAGE_SIZE, |f| set_index(f << 12, &cfg) == target).unwrap().base;
    let mut w = Repeating((0..64).map(|i| page.add(i * 64)).collect());
    let r = identify(&mut p, &mut w, &RegionConfig::default(), &mut m).unwrap();
    assert_eq!(r.detected, (64..128).collect::<Vec<_>>());
}

#[test]
fn differential_examples() {
    let (mut m, cat) = profiled_small(4);
    let mut p = Prober::new(&cat, &cat.first(64)).unwrap();
    let cfg = RegionConfig::default();
    let base = witnesses(&cat, &[2, 30, 41]);
    let mut with9 = base.clone();
    with9.push(cat.sets[9].witness);
    let d = differential(&mut p, &mut Repeating(with9.clone()), &mut Repeating(base.clone()), &cfg, &mut m).unwrap();
    assert_eq!(d, vec![9]);
    let same = differential(&mut p, &mut Repeating(base.clone()), &mut Repeating(base.clone()), &cfg, &mut m).unwrap();
    assert!(same.is_empty());
    let rev = differential(&mut p, &mut Repeating(base), &mut Repeating(with9), &cfg, &mut m).unwrap();
    assert!(rev.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identify_is_monotone(a in prop::collection::btree_set(0usize..64, 0..10), b in prop::collection::btree_set(0usize..64, 0..10)) {
        let (mut m, cat) = profiled_small(5);
        let mut p = Prober::new(&cat, &cat.first(64)).unwrap();
        let cfg = RegionConfig::default();
        let small: Vec<usize> = a.iter().copied().collect();
        let big: Vec<usize> = a.union(&b).copied().collect();
        let rs = identify(&mut p, &mut Repeating(witnesses(&cat, &small)), &cfg, &mut m).unwrap();
        let rb = identify(&mut p, &mut Repeating(witnesses(&cat, &big)), &cfg, &mut m).unwrap();
        prop_assert_eq!(&rs.detected, &small);
        prop_assert!(rs.detected.iter().all(|i| rb.detected.contains(i)));
        prop_assert_eq!(rb.detected, big);
    }
}
