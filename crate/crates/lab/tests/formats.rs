use std::path::Path;

use llc_lab::formats::{catalog, memorygram, model};
use llc_lab::{LabConfig, LabError};
use llc_lab_core::classify::ActivityModel;
use llc_lab_core::covert::NoisePreset;
use llc_lab_core::evset::profile_cache;
use llc_lab_core::memsim::{Machine, SliceHash};
use llc_lab_core::probe::Memorygram;
use proptest::prelude::*;

fn small() -> LabConfig {
    LabConfig::from_toml(
        "[cache]\nnum_sets = 1024\nframe_pool = 16384\n[profiling]\nbuffer_size = 1048576\nstall_limit = 32\nmax_buffers = 6\n",
    )
    .unwrap()
}

#[test]
fn catalog_round_trips() {
    let cfg = small();
    let mut m = Machine::new(cfg.cache.clone()).unwrap();
    let mut p = cfg.profiling.clone();
    p.target_sets = Some(128);
    let cat = profile_cache(&p, &mut m).unwrap();
    let text = catalog::write_catalog(&cat);
    assert!(text.starts_with(catalog::HEADER));
    let sets = catalog::parse_catalog(&text, Path::new("c.txt")).unwrap();
    assert_eq!(sets, cat.sets);
    let first = text.lines().nth(2).unwrap();
    assert_eq!(first.split(' ').count(), 3 + 12);
}

#[test]
fn catalog_errors_name_the_line() {
    let text = "# comment\n0 0x1000 profiled 0x2000\n64 0x1000 profiled 0x2000\n";
    match catalog::parse_catalog(text, Path::new("c.txt")) {
        Err(LabError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(catalog::parse_catalog("1 0x40 guessed 0x80\n", Path::new("c")).is_err());
    assert!(catalog::parse_catalog("1 0x40 verified\n", Path::new("c")).is_err());
}

fn gram(rows: usize, cols: usize, cells: &[u64]) -> Memorygram {
    let mut g = Memorygram::new(rows, cols, 250_000, (0..rows).map(|r| r * 3).collect());
    g.latencies.copy_from_slice(cells);
    g
}

#[test]
fn csv_has_one_row_per_set() {
    let g = gram(2, 3, &[1, 2, 3, 4, 5, 6]);
    assert_eq!(memorygram::write_csv(&g), "set,0,1,2\n0,1,2,3\n3,4,5,6\n");
}

#[test]
fn pgm_layout_and_scaling() {
    let g = gram(2, 3, &[960, 960, 960, 960, 1010, 1560]);
    let bytes = memorygram::write_pgm(&g);
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    let (w, h, px) = memorygram::read_pgm(&bytes).unwrap();
    assert_eq!((w, h), (3, 2));
    // flat row is black; the other spans the full range
    assert_eq!(px, &[0, 0, 0, 0, 21, 255]);
}

proptest! {
    #[test]
    fn pgm_preserves_order_within_rows(cells in prop::collection::vec(900u64..2000, 4 * 9)) {
        let g = gram(4, 9, &cells);
        let bytes = memorygram::write_pgm(&g);
        let (_, _, px) = memorygram::read_pgm(&bytes).unwrap();
        for r in 0..4 {
            let row = g.row(r);
            let lo = *row.iter().min().unwrap();
            let hi = *row.iter().max().unwrap();
            for a in 0..9 {
                let pa = px[r * 9 + a];
                if row[a] == lo { prop_assert_eq!(pa, 0); }
                if row[a] == hi && hi > lo { prop_assert_eq!(pa, 255); }
                for b in 0..9 {
                    if row[a] < row[b] { prop_assert!(pa <= px[r * 9 + b]); }
                }
            }
        }
    }

    #[test]
    fn model_text_is_a_fixed_point(
        k in 2usize..4,
        dims in 1usize..10,
        seed in any::<u64>(),
    ) {
        let val = |i: u64| 900.0 + ((seed ^ i).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f64 / 1024.0;
        let m = ActivityModel {
            thres: 985.0,
            sets: (0..dims).map(|d| d * 2).collect(),
            centroids: (0..k).map(|c| (0..dims).map(|d| val((c * dims + d) as u64)).collect()).collect(),
            weight_centres: (0..k).map(|c| c as f64 * 7.5).collect(),
            focus: (0..dims).step_by(2).collect(),
        };
        let text = model::write_model("mouse", &m);
        let (name, back) = model::parse_model(&text, Path::new("m")).unwrap();
        prop_assert_eq!(name, "mouse");
        prop_assert_eq!(back.sets.clone(), m.sets.clone());
        prop_assert_eq!(back.focus.clone(), m.focus.clone());
        prop_assert_eq!(model::write_model("mouse", &back), text);
    }
}

#[test]
fn model_rejects_inconsistent_files() {
    let ok = "name a\nthres 1\nk 2\nsets 0 1\nfocus\nweights 0 1\ncentroid 1 2\ncentroid 3 4\n";
    assert!(model::parse_model(ok, Path::new("m")).is_ok());
    let short = ok.replace("centroid 3 4\n", "centroid 3\n");
    assert!(model::parse_model(&short, Path::new("m")).is_err());
    let unknown = format!("{ok}colour blue\n");
    assert!(matches!(model::parse_model(&unknown, Path::new("m")), Err(LabError::Parse { line: 9, .. })));
}

#[test]
fn config_keys_are_struct_fields() {
    let cfg = LabConfig::from_toml(
        "[cache]\nways = 16\nslice_hash = \"identity\"\n[channel]\nnoise_preset = \"host_to_vm\"\nsync_preamble = \"0xB38F0E5AC2D1794C\"\n",
    )
    .unwrap();
    assert_eq!(cfg.cache.ways, 16);
    assert_eq!(cfg.cache.slice_hash, SliceHash::Identity);
    assert_eq!(cfg.channel.noise_preset, NoisePreset::HostToVm);
    assert_eq!(cfg.channel.sync_preamble, 0xB38F_0E5A_C2D1_794C);
    assert_eq!(cfg.classify, Default::default());
}

#[test]
fn unknown_keys_are_config_errors() {
    for text in ["[cache]\nwayz = 3\n", "[nonsense]\n", "[cache]\nways = \"many\"\n"] {
        let e = LabConfig::from_toml(text).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{text}: {e}");
    }
}

#[test]
fn invalid_values_fail_validation() {
    let mut cfg = LabConfig::default();
    cfg.cache.ways = 0;
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 3);
    let mut cfg = LabConfig::default();
    cfg.classify.network_sets = 200;
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 3);
    LabConfig::default().validate().unwrap();
}

#[test]
fn default_config_survives_toml() {
    let cfg = LabConfig::default();
    assert_eq!(LabConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}
