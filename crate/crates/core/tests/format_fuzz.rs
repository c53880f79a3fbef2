mod common;

use common::fuzz::{fuzz_suite, valid_file};
use lqe_core::io::{decode, encode, read_cube, write_cube, FormatError};
use lqe_core::rng;
use lqe_core::{CubeDims, Hypercube, LabelMap, IGNORE_LABEL};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn ten_thousand_mutations_never_crash_or_misparse() {
    let (parsed, rejected) = fuzz_suite(31, 10_000).unwrap_or_else(|e| panic!("{e}"));
    assert_eq!(parsed + rejected, 10_000);
    assert!(rejected > 0 && parsed > 0);
}

#[test]
fn file_round_trip() {
    let mut r = rng::seeded(32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cube.hypc");
    let dims = CubeDims::new(2, 3, 4, 5);
    let data = (0..dims.len()).map(|_| r.random::<f32>() as f64).collect();
    let cube = Hypercube::new(dims, vec![500.0, 510.0, 520.0], data).unwrap();
    let labels = LabelMap::new(2, 4, 5, 4, IGNORE_LABEL, (0..40).map(|i| (i % 4) as u16).collect()).unwrap();
    write_cube(&path, &cube, Some(&labels)).unwrap();
    let (c2, l2) = read_cube(&path).unwrap();
    assert_eq!(c2, cube);
    assert_eq!(l2.unwrap(), labels);
}

#[test]
fn distinct_errors_carry_offsets() {
    let mut r = rng::seeded(33);
    let bytes = valid_file(&mut r, true);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(FormatError::BadMagic { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode(&bad), Err(FormatError::UnsupportedVersion { offset: 4, .. })));
    let mut bad = bytes.clone();
    bad[6..10].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode(&bad), Err(FormatError::BadDimension { offset: 6 })));
    let cut = decode(&bytes[..bytes.len() - 1]).unwrap_err();
    assert!(matches!(cut, FormatError::Truncated { .. }), "{cut}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn encode_decode_is_lossless(seed in any::<u64>(), labels in any::<bool>()) {
        let mut r = rng::seeded(seed);
        let bytes = valid_file(&mut r, labels);
        let (cube, map) = decode(&bytes).unwrap();
        prop_assert_eq!(map.is_some(), labels);
        prop_assert_eq!(encode(&cube, map.as_ref()).unwrap(), bytes);
    }
}
