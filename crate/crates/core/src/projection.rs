//! Spectral integration of a hypercube through a filter bank, and its
//! reverse-mode gradient.
//!
//! Forward: `Y[b,f,h,w] = Σ_c Q[f,c] · X[b,c,h,w]`.
//!
//! Backward composes, for an upstream gradient `G = ∂L/∂Y`:
//!
//! ```text
//! ∂L/∂Q[f,c] = Σ_{b,h,w} G[b,f,h,w] · X[b,c,h,w]             (pairwise sum)
//! Q[f,c]     = S[f,c] / (S[f,c*] + ε)                         (c* = first argmax)
//! S[f,c]     = Σ_p a_p · exp(-z²/2),  z = x(1 + s·tanh x),  x = (t_c - c_p)/β_p
//! ```
//!
//! and then through `a = sigmoid(α)`, `β = exp(ℓ)`, `s = 0.5·tanh(γ)`.
//!
//! Reductions over pixels use a fixed binary tree, so results are identical
//! for any rayon thread count.

use rayon::prelude::*;

use crate::cube::{CubeDims, Hypercube, ReducedCube};
use crate::error::{Error, Result};
use crate::filter::{FilterBankParams, FilterResponseMatrix, EPSILON, PARAMS_PER_PEAK};

/// Partial derivatives for one peak.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeakGrad {
    pub d_centroid: f64,
    pub d_log_bandwidth: f64,
    pub d_amplitude_logit: f64,
    pub d_skewness_raw: f64,
}

/// Gradient of a scalar loss with respect to every filter-bank parameter,
/// laid out like [`FilterBankParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    num_filters: usize,
    peaks_per_filter: usize,
    peaks: Vec<PeakGrad>,
}

impl ParamGradients {
    pub fn zeros(num_filters: usize, peaks_per_filter: usize) -> Self {
        Self {
            num_filters,
            peaks_per_filter,
            peaks: vec![PeakGrad::default(); num_filters * peaks_per_filter],
        }
    }

    pub fn zeros_like(params: &FilterBankParams) -> Self {
        Self::zeros(params.num_filters(), params.peaks_per_filter())
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn peaks_per_filter(&self) -> usize {
        self.peaks_per_filter
    }

    pub fn peaks(&self) -> &[PeakGrad] {
        &self.peaks
    }

    pub fn peak(&self, f: usize, p: usize) -> &PeakGrad {
        &self.peaks[f * self.peaks_per_filter + p]
    }

    pub fn peak_mut(&mut self, f: usize, p: usize) -> &mut PeakGrad {
        &mut self.peaks[f * self.peaks_per_filter + p]
    }

    /// Same ordering as [`FilterBankParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.peaks
            .iter()
            .flat_map(|g| [g.d_centroid, g.d_log_bandwidth, g.d_amplitude_logit, g.d_skewness_raw])
            .collect()
    }

    pub fn from_flat(num_filters: usize, peaks_per_filter: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAMS_PER_PEAK * num_filters * peaks_per_filter {
            return Err(Error::dim("flat gradient length does not match 4·P·F"));
        }
        let peaks = flat
            .chunks_exact(PARAMS_PER_PEAK)
            .map(|c| PeakGrad {
                d_centroid: c[0],
                d_log_bandwidth: c[1],
                d_amplitude_logit: c[2],
                d_skewness_raw: c[3],
            })
            .collect();
        Ok(Self {
            num_filters,
            peaks_per_filter,
            peaks,
        })
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        assert_eq!(self.peaks.len(), other.peaks.len(), "gradient shapes differ");
        for (a, b) in self.peaks.iter_mut().zip(&other.peaks) {
            a.d_centroid += scale * b.d_centroid;
            a.d_log_bandwidth += scale * b.d_log_bandwidth;
            a.d_amplitude_logit += scale * b.d_amplitude_logit;
            a.d_skewness_raw += scale * b.d_skewness_raw;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

const PAIRWISE_LEAF: usize = 64;
const PARALLEL_SPLIT: usize = 1 << 14;

/// Sum of `term(i)` for `i in 0..n` over a fixed binary tree: leaves of at
/// most 64 terms summed left to right, internal nodes split at `n / 2`.
pub fn pairwise_sum<F>(n: usize, term: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    fn go<F: Fn(usize) -> f64 + Sync>(lo: usize, hi: usize, term: &F) -> f64 {
        let n = hi - lo;
        if n <= PAIRWISE_LEAF {
            return (lo..hi).map(term).sum();
        }
        let mid = lo + n / 2;
        if n >= PARALLEL_SPLIT {
            let (a, b) = rayon::join(|| go(lo, mid, term), || go(mid, hi, term));
            a + b
        } else {
            go(lo, mid, term) + go(mid, hi, term)
        }
    }
    go(0, n, term)
}

/// Reduce `cube` to `F` channels with the evaluated filter weights.
pub fn apply_filter_bank(cube: &Hypercube, weights: &FilterResponseMatrix) -> Result<ReducedCube> {
    let d = cube.dims();
    if weights.num_channels() != d.channels {
        return Err(Error::dim(format!(
            "filter weights cover {} channels, cube has {}",
            weights.num_channels(),
            d.channels
        )));
    }
    let nf = weights.num_filters();
    let npix = d.pixels_per_image();
    let out_dims = CubeDims::new(d.batch, nf, d.height, d.width);
    let x = cube.data();
    let mut out = vec![0.0; out_dims.len()];
    out.par_chunks_mut(npix).enumerate().for_each(|(plane, y)| {
        let (b, f) = (plane / nf, plane % nf);
        for (c, &q) in weights.row(f).iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let xs = &x[d.plane(b, c)..d.plane(b, c) + npix];
            for (yv, &xv) in y.iter_mut().zip(xs) {
                *yv += q * xv;
            }
        }
    });
    ReducedCube::new(out_dims, out, d.channels)
}

/// Gradients of a loss through [`apply_filter_bank`] and the filter
/// evaluation that produced `cached`.
///
/// `params` must be the parameters `cached` was evaluated from. When
/// `want_input_grad` is set, `∂L/∂X` is returned as a `B × C × H × W` vector.
pub fn backward(
    params: &FilterBankParams,
    cube: &Hypercube,
    cached: &FilterResponseMatrix,
    upstream: &[f64],
    want_input_grad: bool,
) -> Result<(ParamGradients, Option<Vec<f64>>)> {
    let d = cube.dims();
    let (nf, np, nc) = (cached.num_filters(), cached.peaks_per_filter(), cached.num_channels());
    if nc != d.channels {
        return Err(Error::dim(format!(
            "cached response covers {nc} channels, cube has {}",
            d.channels
        )));
    }
    if np == 0 || nf != params.num_filters() || np != params.peaks_per_filter() {
        return Err(Error::dim(
            "cached response was not evaluated from these filter-bank parameters",
        ));
    }
    let up_dims = CubeDims::new(d.batch, nf, d.height, d.width);
    if upstream.len() != up_dims.len() {
        return Err(Error::dim(format!(
            "upstream gradient has {} values, expected {}",
            upstream.len(),
            up_dims.len()
        )));
    }

    let npix = d.pixels_per_image();
    let total = d.batch * npix;
    let x = cube.data();

    // ∂L/∂Q, one fixed-order reduction per (f, c).
    let d_q: Vec<f64> = (0..nf * nc)
        .into_par_iter()
        .map(|fc| {
            let (f, c) = (fc / nc, fc % nc);
            pairwise_sum(total, &|i| {
                let (b, pix) = (i / npix, i % npix);
                upstream[up_dims.plane(b, f) + pix] * x[d.plane(b, c) + pix]
            })
        })
        .collect();

    let mut grads = ParamGradients::zeros(nf, np);
    let lambda = cached.lambda_norm();
    for f in 0..nf {
        let d_q_row = &d_q[f * nc..(f + 1) * nc];
        let sums: Vec<f64> = (0..nc)
            .map(|c| (0..np).map(|p| cached.per_peak(f, p)[c]).sum())
            .collect();
        let denom = cached.row_max()[f] + EPSILON;
        // Q_c = S_c / (S_{c*} + ε): direct term plus the max term on c*.
        let mut d_s: Vec<f64> = d_q_row.iter().map(|g| g / denom).collect();
        let through_max: f64 = d_q_row.iter().zip(&sums).map(|(g, s)| g * s).sum::<f64>() / (denom * denom);
        d_s[cached.row_argmax()[f]] -= through_max;

        for p in 0..np {
            let pk = params.peak(f, p);
            let (a, beta, s) = (pk.amplitude(), pk.bandwidth(), pk.skew());
            let (mut d_a, mut d_c, mut d_l, mut d_skew) = (0.0, 0.0, 0.0, 0.0);
            for (c, &t) in lambda.iter().enumerate() {
                let e = pk.eval(t);
                let dg = d_s[c];
                d_a += dg * e.shape;
                let d_z = -dg * a * e.shape * e.x_skew;
                let dz_dx = 1.0 + s * e.tanh_x + s * e.x * (1.0 - e.tanh_x * e.tanh_x);
                let d_x = d_z * dz_dx;
                d_c -= d_x / beta;
                d_l -= d_x * e.x;
                d_skew += d_z * e.x * e.tanh_x;
            }
            let tanh_g = pk.skewness_raw.tanh();
            *grads.peak_mut(f, p) = PeakGrad {
                d_centroid: d_c,
                d_log_bandwidth: d_l,
                d_amplitude_logit: d_a * a * (1.0 - a),
                d_skewness_raw: d_skew * 0.5 * (1.0 - tanh_g * tanh_g),
            };
        }
    }

    let input_grad = want_input_grad.then(|| {
        let mut gx = vec![0.0; d.len()];
        gx.par_chunks_mut(npix).enumerate().for_each(|(plane, gplane)| {
            let (b, c) = (plane / nc, plane % nc);
            for f in 0..nf {
                let q = cached.weight(f, c);
                let up = &upstream[up_dims.plane(b, f)..up_dims.plane(b, f) + npix];
                for (g, &u) in gplane.iter_mut().zip(up) {
                    *g += q * u;
                }
            }
        });
        gx
    });

    Ok((grads, input_grad))
}
