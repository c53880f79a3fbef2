//! Offline dimensionality-reduction baselines: class-balanced pixel sampling,
//! per-band standardization, and fitted linear projections (PCA, NMF) applied
//! to whole cubes.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{CubeDims, Hypercube, LabeledCube, ReducedCube};
use crate::error::{Error, Result};
use crate::rng;

/// Floor applied to per-band standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Dense row-major `rows × cols` matrix of pixel spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub matrix: SampleMatrix,
    pub labels: Vec<u16>,
    pub per_class_counts: Vec<usize>,
}

/// Class-balanced pixel sampling.
///
/// Each class gets a quota of `target_total / K` pixels. Classes with fewer
/// pixels contribute all of them. A class's draw is split across images in
/// proportion to how many of its pixels each image holds (largest-remainder
/// rounding), then drawn uniformly without replacement within each image.
pub fn stratified_sample(cubes: &[LabeledCube], target_total: usize, seed: u64) -> Result<PixelSample> {
    let first = cubes.first().ok_or_else(|| Error::data("no cubes to sample from"))?;
    let k = first.labels.num_classes();
    let channels = first.cube.dims().channels;
    if target_total < k {
        return Err(Error::config(format!(
            "target_total {target_total} is smaller than K = {k}"
        )));
    }
    for c in cubes {
        if c.labels.num_classes() != k || c.cube.dims().channels != channels {
            return Err(Error::dim("cubes disagree on K or channel count"));
        }
    }

    // (cube, image) pairs and per-image pixel indices for every class
    let mut images = Vec::new();
    for (ci, c) in cubes.iter().enumerate() {
        for b in 0..c.num_images() {
            let mut by_class = vec![Vec::new(); k];
            for (pix, &l) in c.labels.image(b).iter().enumerate() {
                if l != c.labels.ignore() {
                    by_class[l as usize].push(pix);
                }
            }
            images.push((ci, b, by_class));
        }
    }
    let available: Vec<usize> = (0..k)
        .map(|cls| images.iter().map(|(_, _, bc)| bc[cls].len()).sum())
        .collect();
    if available.iter().all(|&n| n == 0) {
        return Err(Error::data("no labeled pixels to sample"));
    }

    let quota = target_total / k;
    let mut rng = rng::seeded(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut per_class_counts = vec![0; k];

    for cls in 0..k {
        let take = available[cls].min(quota);
        if take == 0 {
            continue;
        }
        let counts: Vec<usize> = images.iter().map(|(_, _, bc)| bc[cls].len()).collect();
        for (img, n) in proportional_allocation(take, &counts).into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let (ci, b, by_class) = &images[img];
            let pool = &by_class[cls];
            let mut chosen: Vec<usize> = index::sample(&mut rng, pool.len(), n).into_vec();
            chosen.sort_unstable();
            let cube = &cubes[*ci].cube;
            for i in chosen {
                data.extend(cube.spectrum(*b, pool[i]));
                labels.push(cls as u16);
            }
            per_class_counts[cls] += n;
        }
    }

    let rows = labels.len();
    Ok(PixelSample {
        matrix: SampleMatrix::new(rows, channels, data)?,
        labels,
        per_class_counts,
    })
}

/// Split `total` over bins in proportion to `weights` using largest
/// remainders; ties go to the lower index. No bin exceeds its weight when
/// `total <= Σ weights`.
pub fn proportional_allocation(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut alloc = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as u128 * w as u128;
        alloc.push((exact / sum as u128) as usize);
        remainders.push((exact % sum as u128, i));
    }
    let mut left = total - alloc.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-band mean and population standard deviation, floored at [`STD_FLOOR`].
pub fn fit_band_stats(sample: &SampleMatrix) -> Result<BandStats> {
    if sample.rows < 2 {
        return Err(Error::config("band statistics need at least two samples"));
    }
    let n = sample.rows as f64;
    let mut mean = vec![0.0; sample.cols];
    for i in 0..sample.rows {
        for (m, v) in mean.iter_mut().zip(sample.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; sample.cols];
    for i in 0..sample.rows {
        for ((s, v), m) in var.iter_mut().zip(sample.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(BandStats { mean, std })
}

impl BandStats {
    pub fn standardize_matrix(&self, m: &SampleMatrix) -> Result<SampleMatrix> {
        if m.cols != self.mean.len() {
            return Err(Error::dim("band statistics do not match sample width"));
        }
        let data = m
            .data
            .chunks(m.cols)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, mu), sd)| (v - mu) / sd)
            })
            .collect();
        SampleMatrix::new(m.rows, m.cols, data)
    }
}

/// Standardize every pixel of `cube` with saved statistics.
pub fn apply_band_stats(cube: &Hypercube, stats: &BandStats) -> Result<Hypercube> {
    let d = cube.dims();
    if d.channels != stats.mean.len() {
        return Err(Error::dim(format!(
            "stats cover {} bands, cube has {}",
            stats.mean.len(),
            d.channels
        )));
    }
    let npix = d.pixels_per_image();
    let mut data = cube.data().to_vec();
    data.par_chunks_mut(npix).enumerate().for_each(|(plane, chunk)| {
        let c = plane % d.channels;
        let (mu, sd) = (stats.mean[c], stats.std[c]);
        chunk.iter_mut().for_each(|v| *v = (*v - mu) / sd);
    });
    Hypercube::new(d, cube.wavelengths_nm().to_vec(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProjectionDetail {
    Pca {
        explained_variance: Vec<f64>,
    },
    Nmf {
        iterations_run: usize,
        final_residual: f64,
        /// Frobenius residual before the first update and after every iteration.
        residuals: Vec<f64>,
    },
}

/// `y = components · (x_standardized + offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProjection {
    pub num_components: usize,
    pub num_channels: usize,
    /// `F × C`, row-major.
    pub components: Vec<f64>,
    /// Per-band shift added after standardization (zero for PCA; the NMF
    /// min-shift otherwise).
    pub offset: Vec<f64>,
    pub detail: ProjectionDetail,
}

impl LinearProjection {
    pub fn component(&self, f: usize) -> &[f64] {
        &self.components[f * self.num_channels..(f + 1) * self.num_channels]
    }
}

/// Top-`F` eigenvectors of the sample covariance, by descending eigenvalue.
/// Each component is flipped so its largest-magnitude entry is positive.
pub fn fit_pca(sample: &SampleMatrix, num_components: usize) -> Result<LinearProjection> {
    let (n, c) = (sample.rows, sample.cols);
    if num_components == 0 || n < 2 || num_components > (n - 1).min(c) {
        return Err(Error::config(format!(
            "PCA with F = {num_components} needs 1 <= F <= min(N-1, C) = {}",
            n.saturating_sub(1).min(c)
        )));
    }
    let x = DMatrix::from_row_slice(n, c, &sample.data);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, c, |i, j| x[(i, j)] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(num_components * c);
    let mut explained_variance = Vec::with_capacity(num_components);
    for &idx in order.iter().take(num_components) {
        let v = eig.eigenvectors.column(idx);
        let lead = (0..c).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| sign * x));
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(LinearProjection {
        num_components,
        num_channels: c,
        components,
        offset: vec![0.0; c],
        detail: ProjectionDetail::Pca { explained_variance },
    })
}

/// Random nonnegative starting factors `(W: N×F, H: F×C)`, entries uniform in
/// `[0, sqrt(mean(X)/F))`.
pub fn nmf_init(sample: &SampleMatrix, num_components: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mean = sample.data.iter().sum::<f64>() / sample.data.len().max(1) as f64;
    let scale = (mean / num_components as f64).sqrt();
    let mut rng = rng::seeded(seed);
    let w = (0..sample.rows * num_components)
        .map(|_| scale * rng.random::<f64>())
        .collect();
    let h = (0..num_components * sample.cols)
        .map(|_| scale * rng.random::<f64>())
        .collect();
    (w, h)
}

/// Lee–Seung multiplicative updates minimizing `‖X - WH‖_F`, starting from
/// [`nmf_init`]. Returns `H` as the components.
pub fn fit_nmf(
    sample: &SampleMatrix,
    num_components: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<LinearProjection> {
    let (w, h) = nmf_init(sample, num_components, seed);
    fit_nmf_from(sample, num_components, w, h, max_iter, tol)
}

/// [`fit_nmf`] from explicit starting factors.
pub fn fit_nmf_from(
    sample: &SampleMatrix,
    num_components: usize,
    w0: Vec<f64>,
    h0: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<LinearProjection> {
    let (n, c, f) = (sample.rows, sample.cols, num_components);
    if f == 0 || f > c {
        return Err(Error::config(format!("NMF needs 1 <= F <= C = {c}, got {f}")));
    }
    if let Some(i) = sample.data.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::data(format!(
            "NMF input must be nonnegative; entry {i} is {}",
            sample.data[i]
        )));
    }
    if w0.len() != n * f || h0.len() != f * c {
        return Err(Error::dim("NMF starting factors have the wrong shape"));
    }
    let x = DMatrix::from_row_slice(n, c, &sample.data);
    let mut w = DMatrix::from_row_slice(n, f, &w0);
    let mut h = DMatrix::from_row_slice(f, c, &h0);
    let residual = |w: &DMatrix<f64>, h: &DMatrix<f64>| (&x - w * h).norm();

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let mut residuals = vec![residual(&w, &h)];
    let mut iterations_run = 0;
    for _ in 0..max_iter {
        let wt_x = w.transpose() * &x;
        let wt_w_h = w.transpose() * &w * &h;
        h.zip_zip_apply(&wt_x, &wt_w_h, |hv, num, den| *hv *= ratio(num, den));
        let x_ht = &x * h.transpose();
        let w_h_ht = &w * (&h * h.transpose());
        w.zip_zip_apply(&x_ht, &w_h_ht, |wv, num, den| *wv *= ratio(num, den));

        iterations_run += 1;
        let prev = *residuals.last().expect("non-empty");
        let cur = residual(&w, &h);
        residuals.push(cur);
        if cur == 0.0 || (prev - cur) <= tol * prev {
            break;
        }
    }

    let mut components = Vec::with_capacity(f * c);
    for r in 0..f {
        components.extend((0..c).map(|j| h[(r, j)]));
    }
    Ok(LinearProjection {
        num_components: f,
        num_channels: c,
        components,
        offset: vec![0.0; c],
        detail: ProjectionDetail::Nmf {
            iterations_run,
            final_residual: *residuals.last().expect("non-empty"),
            residuals,
        },
    })
}

/// Standardize with `stats`, add the projection offset, multiply by the
/// components. Output is `B × F × H × W`.
pub fn project(cube: &Hypercube, stats: &BandStats, proj: &LinearProjection) -> Result<ReducedCube> {
    let d = cube.dims();
    if d.channels != proj.num_channels || d.channels != stats.mean.len() {
        return Err(Error::dim(format!(
            "cube has {} channels, stats {} and projection {}",
            d.channels,
            stats.mean.len(),
            proj.num_channels
        )));
    }
    let nf = proj.num_components;
    let npix = d.pixels_per_image();
    let out_dims = CubeDims::new(d.batch, nf, d.height, d.width);
    let x = cube.data();
    let mut out = vec![0.0; out_dims.len()];
    out.par_chunks_mut(npix).enumerate().for_each(|(plane, y)| {
        let (b, f) = (plane / nf, plane % nf);
        for (c, &w) in proj.component(f).iter().enumerate() {
            let (mu, sd, off) = (stats.mean[c], stats.std[c], proj.offset[c]);
            let xs = &x[d.plane(b, c)..d.plane(b, c) + npix];
            for (yv, &xv) in y.iter_mut().zip(xs) {
                *yv += w * ((xv - mu) / sd + off);
            }
        }
    });
    ReducedCube::new(out_dims, out, d.channels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum DrMethod {
    Pca,
    Nmf { max_iter: usize, tol: f64 },
}

/// Saved statistics plus fitted projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalPipeline {
    pub stats: BandStats,
    pub projection: LinearProjection,
}

impl ClassicalPipeline {
    /// Fit statistics on `sample`, standardize it, and fit the projection.
    /// For NMF the standardized sample is shifted by its per-band minimum so
    /// every entry is nonnegative; that shift becomes the projection offset.
    pub fn fit(sample: &SampleMatrix, method: DrMethod, num_components: usize, seed: u64) -> Result<Self> {
        let stats = fit_band_stats(sample)?;
        let standardized = stats.standardize_matrix(sample)?;
        let projection = match method {
            DrMethod::Pca => fit_pca(&standardized, num_components)?,
            DrMethod::Nmf { max_iter, tol } => {
                let offset: Vec<f64> = (0..standardized.cols)
                    .map(|j| {
                        let min = (0..standardized.rows)
                            .map(|i| standardized.get(i, j))
                            .fold(f64::INFINITY, f64::min);
                        (-min).max(0.0)
                    })
                    .collect();
                let shifted = SampleMatrix::new(
                    standardized.rows,
                    standardized.cols,
                    standardized
                        .data
                        .chunks(standardized.cols)
                        .flat_map(|row| row.iter().zip(&offset).map(|(v, o)| (v + o).max(0.0)))
                        .collect(),
                )?;
                let mut p = fit_nmf(&shifted, num_components, max_iter, tol, seed)?;
                p.offset = offset;
                p
            }
        };
        Ok(Self { stats, projection })
    }

    pub fn apply(&self, cube: &Hypercube) -> Result<ReducedCube> {
        project(cube, &self.stats, &self.projection)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        let proj = &p.projection;
        if proj.components.len() != proj.num_components * proj.num_channels
            || proj.offset.len() != proj.num_channels
            || p.stats.mean.len() != proj.num_channels
            || p.stats.std.len() != proj.num_channels
        {
            return Err(Error::config("pipeline JSON has inconsistent shapes"));
        }
        Ok(p)
    }
}
