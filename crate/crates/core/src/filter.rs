//! Learnable multi-peak spectral response filters.
//!
//! Each filter is a sum of `P` asymmetric Gaussian peaks on a normalized
//! wavelength axis `t ∈ [0, 1]`. A peak carries four unconstrained scalars:
//!
//! | field             | derived quantity                     |
//! |-------------------|--------------------------------------|
//! | `centroid`        | peak position `c`                    |
//! | `log_bandwidth`   | width `β = exp(ℓ)`                   |
//! | `amplitude_logit` | amplitude `a = sigmoid(α) ∈ (0, 1)`  |
//! | `skewness_raw`    | skew `s = 0.5·tanh(γ) ∈ (-0.5, 0.5)` |
//!
//! and evaluates as
//!
//! ```text
//! x      = (t - c) / β
//! x_skew = x · (1 + s·tanh(x))
//! g(t)   = a · exp(-x_skew² / 2)
//! ```
//!
//! A filter's response on the dataset channels is the peak sum divided by its
//! maximum over those channels plus [`EPSILON`].

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Guard added to every normalizing denominator.
pub const EPSILON: f64 = 1e-8;

/// Number of learnable scalars per peak.
pub const PARAMS_PER_PEAK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavelengthRange {
    start_nm: f64,
    end_nm: f64,
}

impl WavelengthRange {
    pub fn new(start_nm: f64, end_nm: f64) -> Result<Self> {
        if !(start_nm.is_finite() && end_nm.is_finite()) || end_nm <= start_nm {
            return Err(Error::config(format!(
                "wavelength range requires start < end, got [{start_nm}, {end_nm}]"
            )));
        }
        Ok(Self { start_nm, end_nm })
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn end_nm(&self) -> f64 {
        self.end_nm
    }

    pub fn span_nm(&self) -> f64 {
        self.end_nm - self.start_nm
    }

    /// Normalized coordinate of a wavelength, without range checking.
    pub fn to_normalized(&self, wavelength_nm: f64) -> f64 {
        (wavelength_nm - self.start_nm) / self.span_nm()
    }

    pub fn to_nm(&self, normalized: f64) -> f64 {
        self.start_nm + normalized * self.span_nm()
    }
}

/// Map channel wavelengths onto `[0, 1]`.
pub fn normalize_wavelengths(wavelengths_nm: &[f64], range: &WavelengthRange) -> Result<Vec<f64>> {
    wavelengths_nm
        .iter()
        .enumerate()
        .map(|(channel, &wl)| {
            if !(wl >= range.start_nm && wl <= range.end_nm) {
                return Err(Error::RangeViolation {
                    channel,
                    wavelength_nm: wl,
                    start_nm: range.start_nm,
                    end_nm: range.end_nm,
                });
            }
            Ok(range.to_normalized(wl).clamp(0.0, 1.0))
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeakParams {
    pub centroid: f64,
    pub log_bandwidth: f64,
    pub amplitude_logit: f64,
    pub skewness_raw: f64,
}

/// Intermediate values of one peak evaluated at one wavelength.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PeakEval {
    pub x: f64,
    pub tanh_x: f64,
    pub x_skew: f64,
    /// `exp(-x_skew²/2)`, the response before amplitude scaling.
    pub shape: f64,
}

impl PeakParams {
    pub fn bandwidth(&self) -> f64 {
        self.log_bandwidth.exp()
    }

    pub fn amplitude(&self) -> f64 {
        sigmoid(self.amplitude_logit)
    }

    pub fn skew(&self) -> f64 {
        0.5 * self.skewness_raw.tanh()
    }

    pub(crate) fn eval(&self, lambda_norm: f64) -> PeakEval {
        let x = (lambda_norm - self.centroid) / self.bandwidth();
        let tanh_x = x.tanh();
        let x_skew = x * (1.0 + self.skew() * tanh_x);
        PeakEval {
            x,
            tanh_x,
            x_skew,
            shape: (-0.5 * x_skew * x_skew).exp(),
        }
    }

    /// Response `g(t)` of this peak at normalized wavelength `t`.
    pub fn response(&self, lambda_norm: f64) -> f64 {
        self.amplitude() * self.eval(lambda_norm).shape
    }
}

/// All learnable parameters of an `F × P` filter bank.
///
/// Peaks are stored filter-major: peak `p` of filter `f` lives at `f * P + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBankParams {
    range: WavelengthRange,
    num_filters: usize,
    peaks_per_filter: usize,
    peaks: Vec<PeakParams>,
}

impl FilterBankParams {
    pub fn new(
        range: WavelengthRange,
        num_filters: usize,
        peaks_per_filter: usize,
        peaks: Vec<PeakParams>,
    ) -> Result<Self> {
        if num_filters == 0 || peaks_per_filter == 0 {
            return Err(Error::config(format!(
                "filter bank needs F >= 1 and P >= 1, got F={num_filters}, P={peaks_per_filter}"
            )));
        }
        if peaks.len() != num_filters * peaks_per_filter {
            return Err(Error::dim(format!(
                "expected {} peaks for F={num_filters}, P={peaks_per_filter}, got {}",
                num_filters * peaks_per_filter,
                peaks.len()
            )));
        }
        Ok(Self {
            range,
            num_filters,
            peaks_per_filter,
            peaks,
        })
    }

    /// Random initialization.
    ///
    /// Per peak, in this draw order: centroid `Uniform(0.1, 0.9) + Normal(0, 0.05²)`
    /// clamped to `[0, 1]`; log-bandwidth `ln(0.05 + 0.02·u)` with `u ∈ [0, 1)`;
    /// amplitude logit `Normal(0, 0.5²)`; skewness zero.
    pub fn init(
        num_filters: usize,
        peaks_per_filter: usize,
        range: WavelengthRange,
        seed: u64,
    ) -> Result<Self> {
        if num_filters == 0 || peaks_per_filter == 0 {
            return Err(Error::config(format!(
                "filter bank needs F >= 1 and P >= 1, got F={num_filters}, P={peaks_per_filter}"
            )));
        }
        let mut rng = rng::seeded(seed);
        let centroid_noise = Normal::new(0.0, 0.05).expect("valid sigma");
        let logit = Normal::new(0.0, 0.5).expect("valid sigma");
        let peaks = (0..num_filters * peaks_per_filter)
            .map(|_| {
                let base: f64 = rng.random_range(0.1..0.9);
                let centroid = (base + centroid_noise.sample(&mut rng)).clamp(0.0, 1.0);
                let u: f64 = rng.random();
                PeakParams {
                    centroid,
                    log_bandwidth: (0.05 + 0.02 * u).ln(),
                    amplitude_logit: logit.sample(&mut rng),
                    skewness_raw: 0.0,
                }
            })
            .collect();
        Self::new(range, num_filters, peaks_per_filter, peaks)
    }

    pub fn range(&self) -> &WavelengthRange {
        &self.range
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn peaks_per_filter(&self) -> usize {
        self.peaks_per_filter
    }

    /// Always `4 · P · F`.
    pub fn num_params(&self) -> usize {
        PARAMS_PER_PEAK * self.peaks.len()
    }

    pub fn peaks(&self) -> &[PeakParams] {
        &self.peaks
    }

    pub fn peaks_mut(&mut self) -> &mut [PeakParams] {
        &mut self.peaks
    }

    pub fn filter(&self, f: usize) -> &[PeakParams] {
        let p = self.peaks_per_filter;
        &self.peaks[f * p..(f + 1) * p]
    }

    pub fn peak(&self, f: usize, p: usize) -> &PeakParams {
        &self.peaks[f * self.peaks_per_filter + p]
    }

    pub fn filters(&self) -> impl Iterator<Item = &[PeakParams]> {
        self.peaks.chunks(self.peaks_per_filter)
    }

    /// Flattened parameters, ordered `[c, ℓ, α, γ]` per peak, filter-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.peaks
            .iter()
            .flat_map(|pk| [pk.centroid, pk.log_bandwidth, pk.amplitude_logit, pk.skewness_raw])
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        for (pk, chunk) in self.peaks.iter_mut().zip(flat.chunks_exact(PARAMS_PER_PEAK)) {
            *pk = PeakParams {
                centroid: chunk[0],
                log_bandwidth: chunk[1],
                amplitude_logit: chunk[2],
                skewness_raw: chunk[3],
            };
        }
        Ok(())
    }

    /// Index of the largest-amplitude peak of filter `f`; ties go to the lowest index.
    pub fn dominant_peak(&self, f: usize) -> usize {
        let mut best = 0;
        let mut best_a = f64::NEG_INFINITY;
        for (p, pk) in self.filter(f).iter().enumerate() {
            let a = pk.amplitude();
            if a > best_a {
                best = p;
                best_a = a;
            }
        }
        best
    }

    pub fn dominant_centroids(&self) -> Vec<f64> {
        (0..self.num_filters)
            .map(|f| self.peak(f, self.dominant_peak(f)).centroid)
            .collect()
    }

    /// Number of centroids that have drifted outside `[0, 1]`.
    ///
    /// Centroids are not projected during training; this is reported instead.
    pub fn centroids_out_of_range(&self) -> usize {
        self.peaks
            .iter()
            .filter(|pk| !(0.0..=1.0).contains(&pk.centroid))
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FilterBankDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FilterBankDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl Serialize for FilterBankParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FilterBankDoc::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FilterBankParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = FilterBankDoc::deserialize(deserializer)?;
        doc.try_into().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct RangeDoc {
    start_nm: f64,
    end_nm: f64,
}

#[derive(Serialize, Deserialize)]
struct PeakDoc {
    c: f64,
    log_bw: f64,
    alpha: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct FilterBankDoc {
    range: RangeDoc,
    filters: Vec<Vec<PeakDoc>>,
}

impl From<&FilterBankParams> for FilterBankDoc {
    fn from(params: &FilterBankParams) -> Self {
        FilterBankDoc {
            range: RangeDoc {
                start_nm: params.range.start_nm,
                end_nm: params.range.end_nm,
            },
            filters: params
                .filters()
                .map(|peaks| {
                    peaks
                        .iter()
                        .map(|pk| PeakDoc {
                            c: pk.centroid,
                            log_bw: pk.log_bandwidth,
                            alpha: pk.amplitude_logit,
                            gamma: pk.skewness_raw,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<FilterBankDoc> for FilterBankParams {
    type Error = Error;

    fn try_from(doc: FilterBankDoc) -> Result<Self> {
        let range = WavelengthRange::new(doc.range.start_nm, doc.range.end_nm)?;
        let num_filters = doc.filters.len();
        let peaks_per_filter = doc.filters.first().map_or(0, Vec::len);
        if doc.filters.iter().any(|f| f.len() != peaks_per_filter) {
            return Err(Error::config("every filter must have the same number of peaks"));
        }
        let peaks = doc
            .filters
            .into_iter()
            .flatten()
            .map(|pk| PeakParams {
                centroid: pk.c,
                log_bandwidth: pk.log_bw,
                amplitude_logit: pk.alpha,
                skewness_raw: pk.gamma,
            })
            .collect();
        FilterBankParams::new(range, num_filters, peaks_per_filter, peaks)
    }
}

/// Evaluated, normalized filter weights on a fixed set of channels, plus the
/// intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub struct FilterResponseMatrix {
    num_filters: usize,
    peaks_per_filter: usize,
    num_channels: usize,
    /// `F × C`, row-major.
    weights: Vec<f64>,
    /// `F × P × C`.
    per_peak: Vec<f64>,
    row_max: Vec<f64>,
    /// First channel attaining the row maximum.
    row_argmax: Vec<usize>,
    lambda_norm: Vec<f64>,
}

impl FilterResponseMatrix {
    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn peaks_per_filter(&self) -> usize {
        self.peaks_per_filter
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, f: usize, c: usize) -> f64 {
        self.weights[f * self.num_channels + c]
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.weights[f * self.num_channels..(f + 1) * self.num_channels]
    }

    pub fn per_peak(&self, f: usize, p: usize) -> &[f64] {
        let start = (f * self.peaks_per_filter + p) * self.num_channels;
        &self.per_peak[start..start + self.num_channels]
    }

    pub fn row_max(&self) -> &[f64] {
        &self.row_max
    }

    pub fn row_argmax(&self) -> &[usize] {
        &self.row_argmax
    }

    pub fn lambda_norm(&self) -> &[f64] {
        &self.lambda_norm
    }

    /// Build a response matrix from explicit weights, with no filter-bank
    /// provenance. Such a matrix can be applied but not differentiated.
    pub fn from_weights(num_filters: usize, num_channels: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != num_filters * num_channels {
            return Err(Error::dim(format!(
                "weights have {} entries, expected {num_filters}x{num_channels}",
                weights.len()
            )));
        }
        Ok(Self {
            num_filters,
            peaks_per_filter: 0,
            num_channels,
            weights,
            per_peak: Vec::new(),
            row_max: vec![1.0; num_filters],
            row_argmax: vec![0; num_filters],
            lambda_norm: Vec::new(),
        })
    }
}

/// Evaluate every filter on the given normalized channel coordinates.
pub fn evaluate_filter_bank(params: &FilterBankParams, lambda_norm: &[f64]) -> FilterResponseMatrix {
    let (nf, np, nc) = (params.num_filters, params.peaks_per_filter, lambda_norm.len());
    let mut per_peak = vec![0.0; nf * np * nc];
    let mut weights = vec![0.0; nf * nc];
    let mut row_max = vec![0.0; nf];
    let mut row_argmax = vec![0; nf];

    for f in 0..nf {
        let row = &mut weights[f * nc..(f + 1) * nc];
        for p in 0..np {
            let pk = params.peak(f, p);
            let a = pk.amplitude();
            let g = &mut per_peak[(f * np + p) * nc..(f * np + p + 1) * nc];
            for (c, &t) in lambda_norm.iter().enumerate() {
                g[c] = a * pk.eval(t).shape;
                row[c] += g[c];
            }
        }
        let (argmax, max) = first_argmax(row);
        row_max[f] = max;
        row_argmax[f] = argmax;
        let denom = max + EPSILON;
        row.iter_mut().for_each(|w| *w /= denom);
    }

    FilterResponseMatrix {
        num_filters: nf,
        peaks_per_filter: np,
        num_channels: nc,
        weights,
        per_peak,
        row_max,
        row_argmax,
        lambda_norm: lambda_norm.to_vec(),
    }
}

/// Evaluate filters on an arbitrary grid while normalizing each row by its
/// maximum over `norm_lambda` (the dataset channels). Returns `F × grid.len()`.
pub fn evaluate_on_grid(params: &FilterBankParams, grid: &[f64], norm_lambda: &[f64]) -> Vec<f64> {
    let reference = evaluate_filter_bank(params, norm_lambda);
    let mut out = Vec::with_capacity(params.num_filters * grid.len());
    for (f, peaks) in params.filters().enumerate() {
        let denom = reference.row_max[f] + EPSILON;
        out.extend(
            grid.iter()
                .map(|&t| peaks.iter().map(|pk| pk.response(t)).sum::<f64>() / denom),
        );
    }
    out
}

fn first_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
