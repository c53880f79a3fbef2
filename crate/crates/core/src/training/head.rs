//! Per-pixel classification heads on reduced features.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::{CubeDims, ReducedCube};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum HeadKind {
    /// `logits = W·y + b`
    #[default]
    Linear,
    /// `logits = W₂·tanh(W₁·y + b₁) + b₂`
    Mlp { hidden: usize },
}

/// Head parameters in one flat vector.
///
/// Linear layout: `W (K×F)`, `b (K)`. MLP layout: `W₁ (H×F)`, `b₁ (H)`,
/// `W₂ (K×H)`, `b₂ (K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegHead {
    pub kind: HeadKind,
    pub num_features: usize,
    pub num_classes: usize,
    pub params: Vec<f64>,
}

impl SegHead {
    pub fn init(kind: HeadKind, num_features: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_features == 0 || num_classes < 2 {
            return Err(Error::config("head needs F >= 1 features and K >= 2 classes"));
        }
        let mut rng = rng::seeded(seed);
        let params = match kind {
            HeadKind::Linear => {
                let normal = Normal::new(0.0, 0.1).expect("valid sigma");
                let mut p: Vec<f64> = (0..num_classes * num_features)
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                p.extend(std::iter::repeat_n(0.0, num_classes));
                p
            }
            HeadKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::config("MLP head needs at least one hidden unit"));
                }
                let mut p = Vec::new();
                let lim1 = (6.0 / (num_features + hidden) as f64).sqrt();
                p.extend((0..hidden * num_features).map(|_| rng.random_range(-lim1..lim1)));
                p.extend(std::iter::repeat_n(0.0, hidden));
                let lim2 = (6.0 / (hidden + num_classes) as f64).sqrt();
                p.extend((0..num_classes * hidden).map(|_| rng.random_range(-lim2..lim2)));
                p.extend(std::iter::repeat_n(0.0, num_classes));
                p
            }
        };
        Ok(Self {
            kind,
            num_features,
            num_classes,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Logits `B × K × H × W` and the hidden activations the backward pass needs.
    pub fn forward(&self, features: &ReducedCube) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = features.dims();
        if d.channels != self.num_features {
            return Err(Error::dim(format!(
                "head expects {} features, got {}",
                self.num_features, d.channels
            )));
        }
        let (nf, k) = (self.num_features, self.num_classes);
        let out_dims = self.logit_dims(d);
        let npix = d.pixels_per_image();
        let x = features.data();
        let mut logits = vec![0.0; out_dims.len()];
        let mut y = vec![0.0; nf];
        match self.kind {
            HeadKind::Linear => {
                let (w, bias) = self.params.split_at(k * nf);
                for b in 0..d.batch {
                    for pix in 0..npix {
                        gather(x, d, b, pix, &mut y);
                        for j in 0..k {
                            let row = &w[j * nf..(j + 1) * nf];
                            logits[out_dims.plane(b, j) + pix] =
                                bias[j] + row.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                Ok((logits, Vec::new()))
            }
            HeadKind::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * nf);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(k * hidden);
                let mut acts = vec![0.0; d.batch * npix * hidden];
                for b in 0..d.batch {
                    for pix in 0..npix {
                        gather(x, d, b, pix, &mut y);
                        let hid = &mut acts[(b * npix + pix) * hidden..(b * npix + pix + 1) * hidden];
                        for (u, h) in hid.iter_mut().enumerate() {
                            let row = &w1[u * nf..(u + 1) * nf];
                            *h = (b1[u] + row.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()).tanh();
                        }
                        for j in 0..k {
                            let row = &w2[j * hidden..(j + 1) * hidden];
                            logits[out_dims.plane(b, j) + pix] =
                                b2[j] + row.iter().zip(hid.iter()).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                Ok((logits, acts))
            }
        }
    }

    /// Returns `(∂L/∂params, ∂L/∂features)`.
    pub fn backward(
        &self,
        features: &ReducedCube,
        hidden_acts: &[f64],
        d_logits: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = features.dims();
        let (nf, k) = (self.num_features, self.num_classes);
        let out_dims = self.logit_dims(d);
        if d_logits.len() != out_dims.len() {
            return Err(Error::dim("logit gradient does not match head output"));
        }
        let npix = d.pixels_per_image();
        let x = features.data();
        let mut d_params = vec![0.0; self.params.len()];
        let mut d_x = vec![0.0; x.len()];
        let mut y = vec![0.0; nf];
        let mut g = vec![0.0; k];
        match self.kind {
            HeadKind::Linear => {
                let (w, _) = self.params.split_at(k * nf);
                let (dw, db) = d_params.split_at_mut(k * nf);
                for b in 0..d.batch {
                    for pix in 0..npix {
                        gather(x, d, b, pix, &mut y);
                        for (j, gj) in g.iter_mut().enumerate() {
                            *gj = d_logits[out_dims.plane(b, j) + pix];
                        }
                        for j in 0..k {
                            db[j] += g[j];
                            for f in 0..nf {
                                dw[j * nf + f] += g[j] * y[f];
                                d_x[d.plane(b, f) + pix] += g[j] * w[j * nf + f];
                            }
                        }
                    }
                }
            }
            HeadKind::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * nf);
                let (_, rest) = rest.split_at(hidden);
                let (w2, _) = rest.split_at(k * hidden);
                let (dw1, drest) = d_params.split_at_mut(hidden * nf);
                let (db1, drest) = drest.split_at_mut(hidden);
                let (dw2, db2) = drest.split_at_mut(k * hidden);
                let mut d_pre = vec![0.0; hidden];
                for b in 0..d.batch {
                    for pix in 0..npix {
                        gather(x, d, b, pix, &mut y);
                        let hid = &hidden_acts[(b * npix + pix) * hidden..(b * npix + pix + 1) * hidden];
                        for (j, gj) in g.iter_mut().enumerate() {
                            *gj = d_logits[out_dims.plane(b, j) + pix];
                        }
                        d_pre.iter_mut().for_each(|v| *v = 0.0);
                        for j in 0..k {
                            db2[j] += g[j];
                            for u in 0..hidden {
                                dw2[j * hidden + u] += g[j] * hid[u];
                                d_pre[u] += g[j] * w2[j * hidden + u];
                            }
                        }
                        for u in 0..hidden {
                            let dp = d_pre[u] * (1.0 - hid[u] * hid[u]);
                            db1[u] += dp;
                            for f in 0..nf {
                                dw1[u * nf + f] += dp * y[f];
                                d_x[d.plane(b, f) + pix] += dp * w1[u * nf + f];
                            }
                        }
                    }
                }
            }
        }
        Ok((d_params, d_x))
    }

    /// Argmax class per pixel, `B × H × W`.
    pub fn predict(&self, features: &ReducedCube) -> Result<Vec<u16>> {
        let d = features.dims();
        let (logits, _) = self.forward(features)?;
        let out_dims = self.logit_dims(d);
        let npix = d.pixels_per_image();
        let mut pred = Vec::with_capacity(d.pixels());
        for b in 0..d.batch {
            for pix in 0..npix {
                let mut best = (0usize, f64::NEG_INFINITY);
                for j in 0..self.num_classes {
                    let v = logits[out_dims.plane(b, j) + pix];
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                pred.push(best.0 as u16);
            }
        }
        Ok(pred)
    }

    fn logit_dims(&self, d: CubeDims) -> CubeDims {
        CubeDims::new(d.batch, self.num_classes, d.height, d.width)
    }
}

fn gather(x: &[f64], d: CubeDims, b: usize, pix: usize, out: &mut [f64]) {
    for (f, v) in out.iter_mut().enumerate() {
        *v = x[d.plane(b, f) + pix];
    }
}
