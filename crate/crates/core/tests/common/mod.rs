#![allow(dead_code)]

pub mod cases;
pub mod fuzz;
pub mod oracles;

use lqe_core::projection::backward;
use lqe_core::training::{seg_loss, SegHead};
use lqe_core::{
    apply_filter_bank, evaluate_filter_bank, total_reg, CubeDims, FilterBankParams, Hypercube, LabelMap,
    RegConfig,
};

/// Total objective and its analytic gradient w.r.t. the flat filter parameters.
pub fn objective(
    bank: &FilterBankParams,
    lambda: &[f64],
    cube: &Hypercube,
    labels: &LabelMap,
    head: &SegHead,
    reg: &RegConfig,
) -> (f64, Vec<f64>) {
    let q = evaluate_filter_bank(bank, lambda);
    let y = apply_filter_bank(cube, &q).unwrap();
    let (logits, acts) = head.forward(&y).unwrap();
    let dims = CubeDims { channels: head.num_classes, ..y.dims() };
    let weights = vec![1.0; head.num_classes];
    let seg = seg_loss(&logits, dims, labels.data(), labels.ignore(), &weights).unwrap();
    let (_, d_y) = head.backward(&y, &acts, &seg.grad).unwrap();
    let (g, _) = backward(bank, cube, &q, &d_y, false).unwrap();
    let (r, rg) = total_reg(bank, reg);
    let mut grad = g.to_flat();
    for (a, b) in grad.iter_mut().zip(rg.to_flat()) {
        *a += reg.lambda_reg * b;
    }
    (seg.total + reg.lambda_reg * r.total, grad)
}

/// Value-only version used by finite differences.
pub fn objective_value(
    bank: &FilterBankParams,
    lambda: &[f64],
    cube: &Hypercube,
    labels: &LabelMap,
    head: &SegHead,
    reg: &RegConfig,
) -> f64 {
    objective(bank, lambda, cube, labels, head, reg).0
}

/// Central finite differences of `f` over every coordinate of `x`.
pub fn finite_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + step;
            let plus = f(&buf);
            buf[i] = x[i] - step;
            let minus = f(&buf);
            buf[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Minimum over pairings of the largest absolute difference between two
/// equally sized sets.
pub fn matching_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn go(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc.max((a[i] - b[j]).abs()), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best
}
