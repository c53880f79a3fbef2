use super::{finite_difference, objective, objective_value};
use lqe_core::rng;
use lqe_core::training::{HeadKind, SegHead};
use lqe_core::{
    evaluate_filter_bank, CubeDims, FilterBankParams, Hypercube, LabelMap, PeakParams, RegConfig,
    WavelengthRange, IGNORE_LABEL,
};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
// Central differences at STEP carry ~1e-11 of roundoff; a single-peak
// filter's amplitude cancels in the max normalization up to EPSILON, so its
// exact gradient is ~1e-10 and needs a floor above that noise.
pub const REL_FLOOR: f64 = 1e-6;

pub struct Case {
    pub bank: FilterBankParams,
    pub lambda: Vec<f64>,
    pub cube: Hypercube,
    pub labels: LabelMap,
    pub head: SegHead,
    pub reg: RegConfig,
}

pub fn random_case(r: &mut rng::Rng) -> Case {
    let nf = r.random_range(1..=3);
    let np = r.random_range(1..=3);
    let nc = if r.random_bool(0.5) { 5 } else { 15 };
    let (b, h, w) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
    let peaks = (0..nf * np)
        .map(|_| PeakParams {
            centroid: r.random_range(0.0..1.0),
            log_bandwidth: r.random_range(0.02f64..0.35).ln(),
            amplitude_logit: r.random_range(-2.0..2.0),
            skewness_raw: r.random_range(-1.0..1.0),
        })
        .collect();
    let bank = FilterBankParams::new(WavelengthRange::new(400.0, 700.0).unwrap(), nf, np, peaks).unwrap();
    let wl: Vec<f64> = (0..nc).map(|i| 400.0 + 300.0 * i as f64 / (nc - 1) as f64).collect();
    let lambda = lqe_core::normalize_wavelengths(&wl, bank.range()).unwrap();
    let dims = CubeDims::new(b, nc, h, w);
    let data = (0..dims.len()).map(|_| r.random_range(0.0..1.0)).collect();
    let cube = Hypercube::new(dims, wl, data).unwrap();
    let k = 3u16;
    let labels = (0..b * h * w)
        .map(|_| if r.random_bool(0.1) { IGNORE_LABEL } else { r.random_range(0..k) })
        .collect();
    let labels = LabelMap::new(b, h, w, k, IGNORE_LABEL, labels).unwrap();
    let head = SegHead::init(HeadKind::Linear, nf, k as usize, r.random()).unwrap();
    let reg = RegConfig {
        lambda_reg: 0.5,
        ..RegConfig::default()
    };
    Case { bank, lambda, cube, labels, head, reg }
}

/// True when every max, argmax and ReLU in the objective is at least
/// `KINK_MARGIN` away from switching.
pub fn away_from_kinks(c: &Case) -> bool {
    let q = evaluate_filter_bank(&c.bank, &c.lambda);
    let (nf, np, nc) = (c.bank.num_filters(), c.bank.peaks_per_filter(), c.lambda.len());
    for f in 0..nf {
        let mut row: Vec<f64> = (0..nc).map(|ch| (0..np).map(|p| q.per_peak(f, p)[ch]).sum()).collect();
        row.sort_by(|a, b| b.total_cmp(a));
        if row[0] - row[1] < KINK_MARGIN * row[0] {
            return false;
        }
        let mut amps: Vec<f64> = c.bank.filter(f).iter().map(|p| p.amplitude()).collect();
        amps.sort_by(|a, b| b.total_cmp(a));
        if np > 1 {
            if amps[0] - amps[1] < KINK_MARGIN {
                return false;
            }
            let ratio = amps[1] / (amps[0] + c.reg.epsilon);
            if (ratio - c.reg.r_max).abs() < KINK_MARGIN {
                return false;
            }
        }
        let beta = c.bank.peak(f, c.bank.dominant_peak(f)).bandwidth();
        if (beta - c.reg.beta_min).abs() < KINK_MARGIN || (beta - c.reg.beta_max).abs() < KINK_MARGIN {
            return false;
        }
    }
    let cents = c.bank.dominant_centroids();
    for i in 0..nf {
        for j in i + 1..nf {
            if ((cents[i] - cents[j]).abs() - c.reg.d_min).abs() < KINK_MARGIN {
                return false;
            }
        }
    }
    true
}

/// Worst relative error between analytic and finite-difference gradients.
pub fn check(c: &Case) -> f64 {
    let (_, analytic) = objective(&c.bank, &c.lambda, &c.cube, &c.labels, &c.head, &c.reg);
    let x = c.bank.to_flat();
    let mut probe = c.bank.clone();
    let fd = finite_difference(&x, STEP, |v| {
        probe.set_flat(v).unwrap();
        objective_value(&probe, &c.lambda, &c.cube, &c.labels, &c.head, &c.reg)
    });
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / (f.abs() + REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Check `n` random kink-free configurations; returns the worst error seen.
pub fn run_suite(seed: u64, n: usize, tol: f64) -> Result<f64, String> {
    let mut r = rng::seeded(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < n {
        let case = random_case(&mut r);
        if !away_from_kinks(&case) {
            continue;
        }
        let err = check(&case);
        if !(err < tol) {
            return Err(format!(
                "config {checked}: F={} P={} C={} rel err {err:e}",
                case.bank.num_filters(),
                case.bank.peaks_per_filter(),
                case.lambda.len()
            ));
        }
        worst = worst.max(err);
        checked += 1;
    }
    Ok(worst)
}
