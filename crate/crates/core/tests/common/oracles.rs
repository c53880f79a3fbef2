use lqe_core::classical::{fit_nmf_from, fit_pca, nmf_init, ProjectionDetail, SampleMatrix};
use lqe_core::rng;
use lqe_core::{compute_metrics, ConfusionMatrix};
use rand::Rng;

pub struct Naive {
    pub miou: f64,
    pub mf1: f64,
    pub kappa: f64,
}

/// Expand the matrix into explicit (truth, prediction) pixels and score them
/// with set arithmetic.
pub fn naive_metrics(k: usize, counts: &[u64]) -> Naive {
    let mut pixels = Vec::new();
    for t in 0..k {
        for p in 0..k {
            for _ in 0..counts[t * k + p] {
                pixels.push((t, p));
            }
        }
    }
    let n = pixels.len() as f64;
    let mut ious = Vec::new();
    let mut f1s = Vec::new();
    for c in 0..k {
        let in_truth = pixels.iter().filter(|(t, _)| *t == c).count();
        if in_truth == 0 {
            continue;
        }
        let inter = pixels.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
        let union = pixels.iter().filter(|(t, p)| *t == c || *p == c).count() as f64;
        let in_pred = pixels.iter().filter(|(_, p)| *p == c).count() as f64;
        ious.push(100.0 * inter / union);
        f1s.push(100.0 * 2.0 * inter / (in_truth as f64 + in_pred));
    }
    let agree = pixels.iter().filter(|(t, p)| t == p).count() as f64 / n;
    let chance: f64 = (0..k)
        .map(|c| {
            let a = pixels.iter().filter(|(t, _)| *t == c).count() as f64 / n;
            let b = pixels.iter().filter(|(_, p)| *p == c).count() as f64 / n;
            a * b
        })
        .sum();
    let kappa = if chance >= 1.0 { 100.0 } else { 100.0 * (agree - chance) / (1.0 - chance) };
    Naive {
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
        mf1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        kappa,
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

/// Compare `compute_metrics` with the pixel-expansion oracle on `n` random matrices.
pub fn metrics_suite(seed: u64, n: usize) -> Result<(), String> {
    let mut r = rng::seeded(seed);
    let mut done = 0;
    while done < n {
        let k = r.random_range(2..=19);
        let diag_boost = r.random_range(0..40);
        let counts: Vec<u64> = (0..k * k)
            .map(|i| {
                // leave some rows empty so absent classes are exercised
                if r.random_bool(0.02) {
                    0
                } else {
                    r.random_range(0..12) + if i % (k + 1) == 0 { diag_boost } else { 0 }
                }
            })
            .collect();
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let cm = ConfusionMatrix::from_counts(k, counts.clone()).map_err(|e| e.to_string())?;
        let got = compute_metrics(&cm).map_err(|e| e.to_string())?;
        let want = naive_metrics(k, &counts);
        for (name, a, b) in [("mIoU", got.miou, want.miou), ("mF1", got.mf1, want.mf1), ("kappa", got.kappa, want.kappa)] {
            if !close(a, b) {
                return Err(format!("matrix {done}: {name} {a} vs {b}"));
            }
        }
        done += 1;
    }
    Ok(())
}

pub fn random_matrix(r: &mut rng::Rng, n: usize, c: usize) -> SampleMatrix {
    // correlated columns so the spectrum is well separated
    let mixing: Vec<f64> = (0..c * c).map(|_| r.random_range(-1.0..1.0)).collect();
    let scales: Vec<f64> = (0..c).map(|j| 3.0 / (1.0 + j as f64)).collect();
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let z: Vec<f64> = (0..c).map(|j| scales[j] * r.random_range(-1.0..1.0)).collect();
        for i in 0..c {
            data.push((0..c).map(|j| mixing[i * c + j] * z[j]).sum());
        }
    }
    SampleMatrix::new(n, c, data).unwrap()
}

pub fn covariance(m: &SampleMatrix) -> Vec<Vec<f64>> {
    let (n, c) = (m.rows, m.cols);
    let mean: Vec<f64> = (0..c).map(|j| (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64).collect();
    (0..c)
        .map(|a| {
            (0..c)
                .map(|b| (0..n).map(|i| (m.get(i, a) - mean[a]) * (m.get(i, b) - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

/// Leading eigenvectors by power iteration with deflation.
pub fn power_iteration(mut cov: Vec<Vec<f64>>, k: usize) -> Vec<Vec<f64>> {
    let c = cov.len();
    let mut out = Vec::new();
    for _ in 0..k {
        let mut v: Vec<f64> = (0..c).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20000 {
            let w: Vec<f64> = (0..c).map(|i| (0..c).map(|j| cov[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = norm;
            if delta < 1e-15 {
                break;
            }
        }
        for i in 0..c {
            for j in 0..c {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push(v);
    }
    out
}

/// PCA components against power iteration on `n` random 50 x C matrices.
pub fn pca_suite(seed: u64, n: usize) -> Result<(), String> {
    let mut r = rng::seeded(seed);
    for trial in 0..n {
        let c = r.random_range(3..=8);
        let m = random_matrix(&mut r, 50, c);
        let k = c.min(3);
        let pca = fit_pca(&m, k).map_err(|e| e.to_string())?;
        let oracle = power_iteration(covariance(&m), k);
        for (f, v) in oracle.iter().enumerate() {
            let comp = pca.component(f);
            let cos = comp.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs();
            if !(cos > 1.0 - 1e-8) {
                return Err(format!("trial {trial} component {f}: |cos| = {cos}"));
            }
            // sign convention: largest-magnitude entry positive
            let lead = comp.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead <= 0.0 {
                return Err(format!("trial {trial} component {f}: leading entry {lead} not positive"));
            }
        }
    }
    Ok(())
}

/// NMF residual history is non-increasing on `n` random nonnegative matrices.
pub fn nmf_monotone_suite(seed: u64, n: u64) -> Result<(), String> {
    let mut r = rng::seeded(seed);
    for trial in 0..n {
        let (rows, cols) = (r.random_range(10..40), r.random_range(3..10));
        let x = nonneg_matrix(&mut r, rows, cols);
        let f = r.random_range(1..=cols.min(4));
        let (w0, h0) = nmf_init(&x, f, trial);
        let fit = fit_nmf_from(&x, f, w0, h0, 300, 0.0).map_err(|e| e.to_string())?;
        let ProjectionDetail::Nmf { residuals, .. } = fit.detail else {
            return Err("NMF fit reported a non-NMF detail".into());
        };
        for pair in residuals.windows(2) {
            if pair[1] > pair[0] * (1.0 + 1e-12) {
                return Err(format!("trial {trial}: {} -> {}", pair[0], pair[1]));
            }
        }
        if fit.components.iter().any(|&v| v < 0.0) {
            return Err(format!("trial {trial}: negative component entry"));
        }
    }
    Ok(())
}

/// Straightforward triple-loop multiplicative updates.
pub fn naive_nmf_step(x: &SampleMatrix, w: &mut [f64], h: &mut [f64], f: usize) {
    let (n, c) = (x.rows, x.cols);
    let wh = |w: &[f64], h: &[f64], i: usize, j: usize| (0..f).map(|r| w[i * f + r] * h[r * c + j]).sum::<f64>();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let mut new_h = h.to_vec();
    for r in 0..f {
        for j in 0..c {
            let num: f64 = (0..n).map(|i| w[i * f + r] * x.get(i, j)).sum();
            let den: f64 = (0..n).map(|i| w[i * f + r] * wh(w, h, i, j)).sum();
            new_h[r * c + j] = h[r * c + j] * ratio(num, den);
        }
    }
    h.copy_from_slice(&new_h);
    let mut new_w = w.to_vec();
    for i in 0..n {
        for r in 0..f {
            let num: f64 = (0..c).map(|j| x.get(i, j) * h[r * c + j]).sum();
            let den: f64 = (0..c).map(|j| wh(w, h, i, j) * h[r * c + j]).sum();
            new_w[i * f + r] = w[i * f + r] * ratio(num, den);
        }
    }
    w.copy_from_slice(&new_w);
}

pub fn residual(x: &SampleMatrix, w: &[f64], h: &[f64], f: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows {
        for j in 0..x.cols {
            let v: f64 = (0..f).map(|r| w[i * f + r] * h[r * x.cols + j]).sum();
            s += (x.get(i, j) - v).powi(2);
        }
    }
    s.sqrt()
}

pub fn nonneg_matrix(r: &mut rng::Rng, n: usize, c: usize) -> SampleMatrix {
    SampleMatrix::new(n, c, (0..n * c).map(|_| r.random_range(0.0..2.0)).collect()).unwrap()
}

