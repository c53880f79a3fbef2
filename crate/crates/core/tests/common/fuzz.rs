use std::panic;

use lqe_core::io::{decode, encode};
use lqe_core::rng;
use lqe_core::{CubeDims, Hypercube, LabelMap, IGNORE_LABEL};
use rand::Rng;

pub fn valid_file(r: &mut rng::Rng, with_labels: bool) -> Vec<u8> {
    let (b, c, h, w) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..4), r.random_range(1..4));
    let dims = CubeDims::new(b, c, h, w);
    let wl: Vec<f64> = (0..c).map(|i| 450.0 + 20.0 * i as f64).collect();
    let data = (0..dims.len()).map(|_| r.random_range(0.0f32..1.0) as f64).collect();
    let cube = Hypercube::new(dims, wl, data).unwrap();
    let labels = with_labels.then(|| {
        let l = (0..b * h * w)
            .map(|_| if r.random_bool(0.1) { IGNORE_LABEL } else { r.random_range(0..3) })
            .collect();
        LabelMap::new(b, h, w, 3, IGNORE_LABEL, l).unwrap()
    });
    encode(&cube, labels.as_ref()).unwrap()
}

pub fn mutate(r: &mut rng::Rng, bytes: &[u8]) -> Vec<u8> {
    let mut m = bytes.to_vec();
    match r.random_range(0..6) {
        0 => {
            let i = r.random_range(0..m.len());
            m[i] ^= 1 << r.random_range(0..8);
        }
        1 => {
            for _ in 0..r.random_range(1..8) {
                let i = r.random_range(0..m.len());
                m[i] = r.random();
            }
        }
        2 => m.truncate(r.random_range(0..m.len())),
        3 => {
            let extra = r.random_range(1..16);
            m.extend((0..extra).map(|_| r.random::<u8>()));
        }
        4 => {
            let i = r.random_range(0..=m.len());
            m.insert(i, r.random());
        }
        _ => {
            let i = r.random_range(0..m.len());
            m.remove(i);
        }
    }
    m
}

/// Decode `n` mutated files. Every one must either fail with a classified
/// error or parse to something that re-encodes to the same bytes.
/// Returns `(parsed, rejected)`.
pub fn fuzz_suite(seed: u64, n: usize) -> Result<(usize, usize), String> {
    let mut r = rng::seeded(seed);
    let (mut parsed, mut rejected) = (0, 0);
    for i in 0..n {
        let original = valid_file(&mut r, i % 2 == 0);
        let mutated = mutate(&mut r, &original);
        let result = panic::catch_unwind(|| decode(&mutated)).map_err(|_| format!("decoder panicked on mutation {i}"))?;
        match result {
            Ok((cube, labels)) => {
                let again = encode(&cube, labels.as_ref()).map_err(|e| e.to_string())?;
                if again != mutated {
                    return Err(format!("mutation {i} parsed to a different file"));
                }
                parsed += 1;
            }
            Err(e) => {
                if e.offset() > mutated.len() {
                    return Err(format!("mutation {i}: offset past end in {e}"));
                }
                rejected += 1;
            }
        }
    }
    Ok((parsed, rejected))
}
