//! Shape penalties on the filter bank: one dominant lobe per filter, spacing
//! between dominant centroids, and plausible dominant bandwidths.
//!
//! The dominant peak of a filter is its largest-amplitude peak (lowest index on
//! ties). Which peak is dominant is treated as locally constant; gradients flow
//! only into the selected peaks' parameters. `ReLU'(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterBankParams, EPSILON};
use crate::projection::ParamGradients;

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn relu_active(v: f64) -> bool {
    v > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    pub r_max: f64,
    pub d_min: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub lambda_reg: f64,
    pub epsilon: f64,
    pub use_dominance: bool,
    pub use_separation: bool,
    pub use_bandwidth: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            r_max: 0.3,
            d_min: 0.1,
            beta_min: 0.03,
            beta_max: 0.25,
            lambda_reg: 0.1,
            epsilon: EPSILON,
            use_dominance: true,
            use_separation: true,
            use_bandwidth: true,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_max > 0.0 && self.r_max < 1.0) {
            return Err(Error::config(format!("r_max must be in (0, 1), got {}", self.r_max)));
        }
        if !(self.d_min >= 0.0 && self.d_min < 1.0) {
            return Err(Error::config(format!("d_min must be in [0, 1), got {}", self.d_min)));
        }
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) {
            return Err(Error::config(format!(
                "need 0 < beta_min < beta_max, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::config("lambda_reg must be non-negative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }

    /// Only the given components enabled.
    pub fn with_components(mut self, dominance: bool, separation: bool, bandwidth: bool) -> Self {
        self.use_dominance = dominance;
        self.use_separation = separation;
        self.use_bandwidth = bandwidth;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegLosses {
    pub dominance: f64,
    pub separation: f64,
    pub bandwidth: f64,
    pub total: f64,
}

/// Mean over filters of `ReLU(a_2nd / (a_max + ε) - r_max)`. Zero for `P = 1`.
pub fn dominance_loss(params: &FilterBankParams, r_max: f64, epsilon: f64) -> (f64, ParamGradients) {
    let nf = params.num_filters();
    let mut grads = ParamGradients::zeros_like(params);
    if params.peaks_per_filter() < 2 {
        return (0.0, grads);
    }
    let scale = 1.0 / nf as f64;
    let mut loss = 0.0;
    for f in 0..nf {
        let top = params.dominant_peak(f);
        let mut second = None;
        let mut second_a = f64::NEG_INFINITY;
        for (p, pk) in params.filter(f).iter().enumerate() {
            if p != top && pk.amplitude() > second_a {
                second = Some(p);
                second_a = pk.amplitude();
            }
        }
        let second = second.expect("P >= 2");
        let a_top = params.peak(f, top).amplitude();
        let denom = a_top + epsilon;
        let excess = second_a / denom - r_max;
        loss += relu(excess);
        if relu_active(excess) {
            let d_second = scale / denom;
            let d_top = -scale * second_a / (denom * denom);
            grads.peak_mut(f, second).d_amplitude_logit += d_second * second_a * (1.0 - second_a);
            grads.peak_mut(f, top).d_amplitude_logit += d_top * a_top * (1.0 - a_top);
        }
    }
    (loss * scale, grads)
}

/// `(1/F²) Σ_f Σ_{k≠f} ReLU(d_min - |c_f - c_k|)` over dominant centroids.
pub fn separation_loss(params: &FilterBankParams, d_min: f64) -> (f64, ParamGradients) {
    let nf = params.num_filters();
    let mut grads = ParamGradients::zeros_like(params);
    let dominant: Vec<usize> = (0..nf).map(|f| params.dominant_peak(f)).collect();
    let centroids: Vec<f64> = (0..nf).map(|f| params.peak(f, dominant[f]).centroid).collect();
    let scale = 1.0 / (nf * nf) as f64;
    let mut loss = 0.0;
    for f in 0..nf {
        for k in 0..nf {
            if k == f {
                continue;
            }
            let diff = centroids[f] - centroids[k];
            let gap = d_min - diff.abs();
            loss += relu(gap);
            if relu_active(gap) {
                // ∂(-|diff|)/∂c_f = -sign(diff); sign(0) = 0.
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grads.peak_mut(f, dominant[f]).d_centroid -= scale * sign;
                grads.peak_mut(k, dominant[k]).d_centroid += scale * sign;
            }
        }
    }
    (loss * scale, grads)
}

/// Mean over filters of the dominant bandwidth's distance outside `[beta_min, beta_max]`.
pub fn bandwidth_loss(params: &FilterBankParams, beta_min: f64, beta_max: f64) -> (f64, ParamGradients) {
    let nf = params.num_filters();
    let mut grads = ParamGradients::zeros_like(params);
    let scale = 1.0 / nf as f64;
    let mut loss = 0.0;
    for f in 0..nf {
        let p = params.dominant_peak(f);
        let beta = params.peak(f, p).bandwidth();
        let (below, above) = (beta_min - beta, beta - beta_max);
        loss += relu(below) + relu(above);
        // dβ/dℓ = β
        let mut d = 0.0;
        if relu_active(below) {
            d -= beta;
        }
        if relu_active(above) {
            d += beta;
        }
        grads.peak_mut(f, p).d_log_bandwidth += scale * d;
    }
    (loss * scale, grads)
}

/// Enabled components and their summed gradient. Disabled components report 0.
pub fn total_reg(params: &FilterBankParams, config: &RegConfig) -> (RegLosses, ParamGradients) {
    let mut grads = ParamGradients::zeros_like(params);
    let mut losses = RegLosses::default();
    if config.use_dominance {
        let (v, g) = dominance_loss(params, config.r_max, config.epsilon);
        losses.dominance = v;
        grads.add_scaled(&g, 1.0);
    }
    if config.use_separation {
        let (v, g) = separation_loss(params, config.d_min);
        losses.separation = v;
        grads.add_scaled(&g, 1.0);
    }
    if config.use_bandwidth {
        let (v, g) = bandwidth_loss(params, config.beta_min, config.beta_max);
        losses.bandwidth = v;
        grads.add_scaled(&g, 1.0);
    }
    losses.total = losses.dominance + losses.separation + losses.bandwidth;
    (losses, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{PeakParams, WavelengthRange};

    fn logit(a: f64) -> f64 {
        (a / (1.0 - a)).ln()
    }

    fn bank(nf: usize, np: usize, peaks: &[(f64, f64, f64)]) -> FilterBankParams {
        let range = WavelengthRange::new(400.0, 700.0).unwrap();
        let peaks = peaks
            .iter()
            .map(|&(c, beta, a)| PeakParams {
                centroid: c,
                log_bandwidth: beta.ln(),
                amplitude_logit: logit(a),
                skewness_raw: 0.0,
            })
            .collect();
        FilterBankParams::new(range, nf, np, peaks).unwrap()
    }

    #[test]
    fn dominance_single_peak_is_zero() {
        let b = bank(2, 1, &[(0.2, 0.1, 0.9), (0.7, 0.1, 0.4)]);
        assert_eq!(dominance_loss(&b, 0.3, EPSILON).0, 0.0);
    }

    #[test]
    fn dominance_worked_values() {
        let b = bank(1, 2, &[(0.2, 0.1, 0.8), (0.6, 0.1, 0.5)]);
        let v = dominance_loss(&b, 0.3, EPSILON).0;
        assert!((v - (0.5 / (0.8 + EPSILON) - 0.3)).abs() < 1e-12);
        assert!((v - 0.325).abs() < 1e-7);
        let b = bank(1, 2, &[(0.2, 0.1, 0.8), (0.6, 0.1, 0.2)]);
        assert_eq!(dominance_loss(&b, 0.3, EPSILON).0, 0.0);
    }

    #[test]
    fn separation_worked_values() {
        let far = bank(2, 1, &[(0.2, 0.1, 0.5), (0.8, 0.1, 0.5)]);
        assert_eq!(separation_loss(&far, 0.1).0, 0.0);
        let near = bank(2, 1, &[(0.50, 0.1, 0.5), (0.55, 0.1, 0.5)]);
        let v = separation_loss(&near, 0.1).0;
        assert!((v - 0.25 * 2.0 * (0.1 - (0.55f64 - 0.50).abs())).abs() < 1e-12);
        assert!((v - 0.025).abs() < 1e-12);
        let single = bank(1, 1, &[(0.5, 0.1, 0.5)]);
        assert_eq!(separation_loss(&single, 0.1).0, 0.0);
    }

    #[test]
    fn separation_uses_dominant_peak_only() {
        // Secondary peaks sit on top of each other; dominant ones are far apart.
        let b = bank(2, 2, &[(0.1, 0.1, 0.9), (0.5, 0.1, 0.2), (0.9, 0.1, 0.9), (0.5, 0.1, 0.2)]);
        assert_eq!(separation_loss(&b, 0.1).0, 0.0);
    }

    #[test]
    fn bandwidth_worked_values() {
        let inside = bank(1, 1, &[(0.5, 0.10, 0.5)]);
        assert_eq!(bandwidth_loss(&inside, 0.03, 0.25).0, 0.0);
        let wide = bank(1, 1, &[(0.5, 0.30, 0.5)]);
        assert!((bandwidth_loss(&wide, 0.03, 0.25).0 - 0.05).abs() < 1e-12);
        let narrow = bank(1, 1, &[(0.5, 0.01, 0.5)]);
        assert!((bandwidth_loss(&narrow, 0.03, 0.25).0 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn total_sums_components() {
        let b = bank(2, 2, &[(0.50, 0.30, 0.8), (0.1, 0.1, 0.5), (0.55, 0.1, 0.2), (0.9, 0.1, 0.1)]);
        let cfg = RegConfig::default();
        let (l, g) = total_reg(&b, &cfg);
        assert_eq!(l.total, l.dominance + l.separation + l.bandwidth);
        let mut sum = dominance_loss(&b, cfg.r_max, cfg.epsilon).1;
        sum.add_scaled(&separation_loss(&b, cfg.d_min).1, 1.0);
        sum.add_scaled(&bandwidth_loss(&b, cfg.beta_min, cfg.beta_max).1, 1.0);
        assert_eq!(g, sum);
    }

    #[test]
    fn disabled_components_report_zero() {
        let b = bank(2, 2, &[(0.50, 0.30, 0.8), (0.1, 0.1, 0.5), (0.55, 0.1, 0.2), (0.9, 0.1, 0.1)]);
        let cfg = RegConfig::default().with_components(false, true, false);
        let (l, _) = total_reg(&b, &cfg);
        assert_eq!(l.dominance, 0.0);
        assert_eq!(l.bandwidth, 0.0);
        assert_eq!(l.total, l.separation);
        assert!(l.separation > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(RegConfig::default().validate().is_ok());
        let bad = RegConfig {
            beta_min: 0.3,
            ..RegConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RegConfig {
            r_max: 1.0,
            ..RegConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
