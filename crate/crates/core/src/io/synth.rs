//! Synthetic labeled hypercubes with planted discriminative wavelengths.
//!
//! Each class owns a material spectrum: a baseline plus Gaussian bumps. A
//! pixel's spectrum is its class material, plus class-independent nuisance
//! bumps whose per-pixel amplitude is drawn from `N(0, σ_n)`, plus i.i.d.
//! Gaussian noise on every channel. Labels come from a Voronoi partition of
//! each image into random blobs.
//!
//! Randomness: image `g` (train images first, then validation) takes its blob
//! layout from stream `g` of `derive_seed(seed, 10)` and pixel `i` of that
//! image draws from stream `i` of `derive_seed(derive_seed(seed, 11), g)`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{CubeDims, Hypercube, LabelMap, LabeledCube, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance (nm) for treating a bump as sitting on a planted center.
pub const PLANTED_TOL_NM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center_nm: f64,
    pub width_nm: f64,
    pub height: f64,
}

impl Bump {
    pub fn eval(&self, lambda_nm: f64) -> f64 {
        let z = (lambda_nm - self.center_nm) / self.width_nm;
        self.height * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    #[serde(default)]
    pub baseline: f64,
    pub bumps: Vec<Bump>,
}

impl Material {
    pub fn eval(&self, lambda_nm: f64) -> f64 {
        self.baseline + self.bumps.iter().map(|b| b.eval(lambda_nm)).sum::<f64>()
    }
}

/// Class-independent variation: a bump shape whose amplitude is drawn per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nuisance {
    pub center_nm: f64,
    pub width_nm: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WavelengthGrid {
    /// 15 channels, 470–630 nm.
    HykoLike,
    /// 25 channels, 600–975 nm.
    HsiDriveLike,
    Linear { start_nm: f64, end_nm: f64, channels: usize },
    Explicit { wavelengths_nm: Vec<f64> },
}

impl WavelengthGrid {
    pub fn wavelengths_nm(&self) -> Result<Vec<f64>> {
        let linear = |start: f64, end: f64, n: usize| -> Result<Vec<f64>> {
            if n < 2 || !(end > start) || !start.is_finite() || !end.is_finite() {
                return Err(Error::config(format!(
                    "linear grid needs >= 2 channels and start < end, got {n} on [{start}, {end}]"
                )));
            }
            Ok((0..n)
                .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
                .collect())
        };
        match self {
            WavelengthGrid::HykoLike => linear(470.0, 630.0, 15),
            WavelengthGrid::HsiDriveLike => linear(600.0, 975.0, 25),
            WavelengthGrid::Linear {
                start_nm,
                end_nm,
                channels,
            } => linear(*start_nm, *end_nm, *channels),
            WavelengthGrid::Explicit { wavelengths_nm } => {
                let ok = !wavelengths_nm.is_empty()
                    && wavelengths_nm.iter().all(|w| w.is_finite())
                    && wavelengths_nm.windows(2).all(|w| w[1] > w[0]);
                if !ok {
                    return Err(Error::config("explicit grid must be finite and strictly increasing"));
                }
                Ok(wavelengths_nm.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub grid: WavelengthGrid,
    /// One material per class.
    pub classes: Vec<Material>,
    pub planted_centers_nm: Vec<f64>,
    #[serde(default)]
    pub nuisance: Vec<Nuisance>,
    pub noise_sigma: f64,
    pub blobs_per_image: usize,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: LabeledCube,
    pub val: LabeledCube,
}

fn on_planted(center_nm: f64, planted: &[f64]) -> bool {
    planted.iter().any(|p| (p - center_nm).abs() <= PLANTED_TOL_NM)
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Pairs of classes whose materials agree except for bumps centered on
    /// planted wavelengths.
    pub fn metameric_pairs(&self) -> Vec<(usize, usize)> {
        let off_planted = |m: &Material| -> Vec<Bump> {
            m.bumps
                .iter()
                .filter(|b| !on_planted(b.center_nm, &self.planted_centers_nm))
                .copied()
                .collect()
        };
        let mut pairs = Vec::new();
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                let (a, b) = (&self.classes[i], &self.classes[j]);
                if a.baseline == b.baseline && off_planted(a) == off_planted(b) && a != b {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if !(2..IGNORE_LABEL as usize).contains(&k) {
            return Err(Error::config(format!("need at least 2 classes, got {k}")));
        }
        if self.height == 0 || self.width == 0 || self.n_train == 0 || self.n_val == 0 {
            return Err(Error::config("height, width, n_train and n_val must all be >= 1"));
        }
        if self.blobs_per_image == 0 {
            return Err(Error::config("blobs_per_image must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        let bumps = self.classes.iter().flat_map(|m| m.bumps.iter());
        for b in bumps {
            if !(b.width_nm > 0.0) || !b.center_nm.is_finite() || !b.height.is_finite() {
                return Err(Error::config(format!("invalid bump {b:?}")));
            }
        }
        for n in &self.nuisance {
            if !(n.width_nm > 0.0) || !(n.sigma >= 0.0) || !n.center_nm.is_finite() || !n.sigma.is_finite() {
                return Err(Error::config(format!("invalid nuisance component {n:?}")));
            }
        }
        self.grid.wavelengths_nm()?;
        if self.planted_centers_nm.is_empty() || self.metameric_pairs().is_empty() {
            return Err(Error::config(
                "no pair of classes is identical outside the planted centers",
            ));
        }
        Ok(())
    }

    /// Noise-free class spectrum sampled at the grid's channels.
    pub fn class_spectrum(&self, class: usize) -> Result<Vec<f64>> {
        let m = self
            .classes
            .get(class)
            .ok_or_else(|| Error::config(format!("class {class} out of range")))?;
        Ok(self.grid.wavelengths_nm()?.iter().map(|&l| m.eval(l)).collect())
    }

    /// Metameric task on `grid`: class 0 is a shared base material and class
    /// `i ≥ 1` adds one narrow bump at planted normalized wavelength
    /// `planted_norm[i-1]`. Strong nuisance components, each spread over
    /// several channels away from the planted centers, dominate the variance
    /// so that the discriminative bands are low-variance.
    pub fn metameric(grid: WavelengthGrid, planted_norm: &[f64], seed: u64) -> Result<Self> {
        let wl = grid.wavelengths_nm()?;
        let (start, end) = (wl[0], wl[wl.len() - 1]);
        let span = end - start;
        let nm = |t: f64| start + t * span;
        let base = Material {
            baseline: 0.3,
            bumps: vec![
                Bump { center_nm: nm(0.1), width_nm: 0.15 * span, height: 0.2 },
                Bump { center_nm: nm(0.55), width_nm: 0.1 * span, height: 0.15 },
                Bump { center_nm: nm(0.9), width_nm: 0.1 * span, height: 0.1 },
            ],
        };
        let planted_centers_nm: Vec<f64> = planted_norm.iter().map(|&t| nm(t)).collect();
        let mut classes = vec![base.clone()];
        for &c in &planted_centers_nm {
            let mut m = base.clone();
            m.bumps.push(Bump { center_nm: c, width_nm: 0.04 * span, height: 0.2 });
            classes.push(m);
        }
        let spec = Self {
            grid,
            classes,
            planted_centers_nm,
            nuisance: [0.02, 0.47, 0.97]
                .iter()
                .map(|&t| Nuisance { center_nm: nm(t), width_nm: 0.08 * span, sigma: 0.15 })
                .collect(),
            noise_sigma: 0.01,
            blobs_per_image: 12,
            height: 32,
            width: 32,
            n_train: 8,
            n_val: 4,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Control task: classes differ through broad, high-amplitude bumps and
    /// there is no nuisance variation, so the top principal directions carry
    /// the class signal. Class 0 and 1 still form a metameric pair at the
    /// planted center.
    pub fn variance_aligned(grid: WavelengthGrid, seed: u64) -> Result<Self> {
        let wl = grid.wavelengths_nm()?;
        let (start, end) = (wl[0], wl[wl.len() - 1]);
        let span = end - start;
        let nm = |t: f64| start + t * span;
        let base = Material {
            baseline: 0.3,
            bumps: vec![Bump { center_nm: nm(0.5), width_nm: 0.3 * span, height: 0.1 }],
        };
        let planted = nm(0.3);
        let broad = |center: f64, height: f64| Bump { center_nm: center, width_nm: 0.25 * span, height };
        let c0 = base.clone();
        let mut c1 = base.clone();
        c1.bumps.push(broad(planted, 0.4));
        let mut c2 = base;
        c2.bumps.push(broad(nm(0.75), 0.4));
        let spec = Self {
            grid,
            classes: vec![c0, c1, c2],
            planted_centers_nm: vec![planted],
            nuisance: Vec::new(),
            noise_sigma: 0.02,
            blobs_per_image: 12,
            height: 32,
            width: 32,
            n_train: 8,
            n_val: 4,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Voronoi blob labels for one image.
fn blob_labels(spec: &SynthSpec, image: u64) -> Vec<u16> {
    let mut rng = rng::stream(rng::derive_seed(spec.seed, 10), image);
    let k = spec.classes.len();
    let n = spec.blobs_per_image;
    let centers: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random::<f64>() * spec.height as f64,
                rng.random::<f64>() * spec.width as f64,
            )
        })
        .collect();
    let mut classes: Vec<u16> = (0..n).map(|i| (i % k) as u16).collect();
    classes.shuffle(&mut rng);
    let mut labels = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut best = (0, f64::INFINITY);
            for (i, &(cy, cx)) in centers.iter().enumerate() {
                let d = (py - cy).powi(2) + (px - cx).powi(2);
                if d < best.1 {
                    best = (i, d);
                }
            }
            labels.push(classes[best.0]);
        }
    }
    labels
}

/// Generate the train/validation split described by `spec`.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let wl = spec.grid.wavelengths_nm()?;
    let c = wl.len();
    let npix = spec.height * spec.width;
    let class_spectra: Vec<Vec<f64>> = (0..spec.classes.len())
        .map(|k| spec.class_spectrum(k))
        .collect::<Result<_>>()?;
    let nuisance_shapes: Vec<Vec<f64>> = spec
        .nuisance
        .iter()
        .map(|n| {
            let shape = Bump { center_nm: n.center_nm, width_nm: n.width_nm, height: 1.0 };
            wl.iter().map(|&l| shape.eval(l)).collect()
        })
        .collect();
    let pixel_root = rng::derive_seed(spec.seed, 11);

    let make = |first: usize, count: usize| -> Result<LabeledCube> {
        let dims = CubeDims::new(count, c, spec.height, spec.width);
        let mut data = vec![0.0; dims.len()];
        let mut labels = Vec::with_capacity(count * npix);
        for b in 0..count {
            let g = (first + b) as u64;
            let img_labels = blob_labels(spec, g);
            let img_seed = rng::derive_seed(pixel_root, g);
            // pixel-major spectra, then transposed into the plane layout
            let spectra: Vec<f64> = (0..npix)
                .into_par_iter()
                .flat_map_iter(|pix| {
                    let mut r = rng::stream(img_seed, pix as u64);
                    let mut s = class_spectra[img_labels[pix] as usize].clone();
                    for (n, shape) in spec.nuisance.iter().zip(&nuisance_shapes) {
                        let z: f64 = StandardNormal.sample(&mut r);
                        let amp = n.sigma * z;
                        s.iter_mut().zip(shape).for_each(|(v, sh)| *v += amp * sh);
                    }
                    if spec.noise_sigma > 0.0 {
                        for v in s.iter_mut() {
                            let z: f64 = StandardNormal.sample(&mut r);
                            *v += spec.noise_sigma * z;
                        }
                    }
                    s
                })
                .collect();
            for pix in 0..npix {
                for ch in 0..c {
                    data[dims.plane(b, ch) + pix] = spectra[pix * c + ch];
                }
            }
            labels.extend(img_labels);
        }
        let cube = Hypercube::new(dims, wl.clone(), data)?;
        let map = LabelMap::new(
            count,
            spec.height,
            spec.width,
            spec.classes.len() as u16,
            IGNORE_LABEL,
            labels,
        )?;
        LabeledCube::new(cube, map)
    };

    Ok(SynthDataset {
        train: make(0, spec.n_train)?,
        val: make(spec.n_train, spec.n_val)?,
    })
}
