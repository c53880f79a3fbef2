use crate::cube::CubeDims;
use crate::error::{Error, Result};
use crate::regularization::RegLosses;

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SegLoss {
    pub cross_entropy: f64,
    pub dice: f64,
    pub total: f64,
    /// `∂total/∂logits`, same layout as the logits.
    pub grad: Vec<f64>,
}

/// Class-weighted cross-entropy plus soft Dice over softmax probabilities.
///
/// `logits` is `B × K × H × W` (`dims.channels = K`), `labels` is `B × H × W`.
/// Cross-entropy is `Σ w_y·(-log p_y) / Σ w_y` over non-ignored pixels. Dice is
/// `1 - mean_k (2·Σ p_k g_k + s) / (Σ p_k + Σ g_k + s)` over all `K` classes.
pub fn seg_loss(
    logits: &[f64],
    dims: CubeDims,
    labels: &[u16],
    ignore: u16,
    class_weights: &[f64],
) -> Result<SegLoss> {
    let k = dims.channels;
    let npix = dims.pixels_per_image();
    if logits.len() != dims.len() {
        return Err(Error::dim(format!("{} logits for dims {dims:?}", logits.len())));
    }
    if labels.len() != dims.pixels() {
        return Err(Error::dim(format!(
            "{} labels for {} pixels",
            labels.len(),
            dims.pixels()
        )));
    }
    if class_weights.len() != k || class_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config(format!("need {k} non-negative class weights")));
    }

    let mut probs = vec![0.0; logits.len()];
    let mut ce_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut inter = vec![0.0; k];
    let mut prob_sum = vec![0.0; k];
    let mut truth_sum = vec![0.0; k];
    let mut z = vec![0.0; k];

    for b in 0..dims.batch {
        for pix in 0..npix {
            let label = labels[b * npix + pix];
            if label == ignore {
                continue;
            }
            let y = label as usize;
            if y >= k {
                return Err(Error::data(format!("label {label} outside 0..{k}")));
            }
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = logits[dims.plane(b, j) + pix];
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + norm.ln();
            ce_sum += class_weights[y] * (log_norm - z[y]);
            weight_sum += class_weights[y];
            for j in 0..k {
                let p = (z[j] - log_norm).exp();
                probs[dims.plane(b, j) + pix] = p;
                prob_sum[j] += p;
            }
            inter[y] += probs[dims.plane(b, y) + pix];
            truth_sum[y] += 1.0;
        }
    }

    let cross_entropy = if weight_sum > 0.0 { ce_sum / weight_sum } else { 0.0 };
    let denom: Vec<f64> = (0..k).map(|j| prob_sum[j] + truth_sum[j] + DICE_SMOOTH).collect();
    let numer: Vec<f64> = (0..k).map(|j| 2.0 * inter[j] + DICE_SMOOTH).collect();
    let any_valid = truth_sum.iter().any(|&t| t > 0.0);
    let dice = if any_valid {
        1.0 - (0..k).map(|j| numer[j] / denom[j]).sum::<f64>() / k as f64
    } else {
        0.0
    };

    let mut grad = vec![0.0; logits.len()];
    if any_valid {
        let mut d_p = vec![0.0; k];
        for b in 0..dims.batch {
            for pix in 0..npix {
                let label = labels[b * npix + pix];
                if label == ignore {
                    continue;
                }
                let y = label as usize;
                let ce_scale = if weight_sum > 0.0 { class_weights[y] / weight_sum } else { 0.0 };
                let mut dot = 0.0;
                for j in 0..k {
                    let g = if j == y { 1.0 } else { 0.0 };
                    d_p[j] = -(2.0 * g * denom[j] - numer[j]) / (denom[j] * denom[j]) / k as f64;
                    dot += probs[dims.plane(b, j) + pix] * d_p[j];
                }
                for j in 0..k {
                    let idx = dims.plane(b, j) + pix;
                    let p = probs[idx];
                    let onehot = if j == y { 1.0 } else { 0.0 };
                    grad[idx] = ce_scale * (p - onehot) + p * (d_p[j] - dot);
                }
            }
        }
    }

    Ok(SegLoss {
        cross_entropy,
        dice,
        total: cross_entropy + dice,
        grad,
    })
}

/// `seg + λ_reg · reg.total`.
pub fn total_loss(seg: f64, reg: &RegLosses, lambda_reg: f64) -> f64 {
    seg + lambda_reg * reg.total
}

/// Inverse class frequency, normalized so present classes average 1.
/// Classes with no pixels get weight 0.
pub fn class_weights_inverse_frequency(counts: &[u64]) -> Vec<f64> {
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 })
        .collect();
    let present = counts.iter().filter(|&&n| n > 0).count();
    let mean = raw.iter().sum::<f64>() / present.max(1) as f64;
    raw.iter().map(|w| if mean > 0.0 { w / mean } else { 0.0 }).collect()
}
