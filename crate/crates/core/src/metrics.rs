//! Confusion-matrix segmentation metrics.
//!
//! Conventions: rows are ground truth, columns are predictions. Classes with no
//! ground-truth pixels are left out of the class means. IoU, F1, accuracy and
//! specificity are percentages; kappa is scaled by 100 as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// From row-major counts (`truth × prediction`).
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::dim(format!(
                "{} counts for a {num_classes}x{num_classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Add one count per pixel whose label is not `ignore`.
    pub fn accumulate(&mut self, predictions: &[u16], labels: &[u16], ignore: u16) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let k = self.num_classes;
        for (i, (&p, &t)) in predictions.iter().zip(labels).enumerate() {
            if t == ignore {
                continue;
            }
            if t as usize >= k || p as usize >= k {
                return Err(Error::data(format!(
                    "class id out of range at pixel {i}: truth {t}, prediction {p}, K = {k}"
                )));
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::dim("cannot merge confusion matrices of different K"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    /// `None` for classes absent from the ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_f1: Vec<Option<f64>>,
    pub miou: f64,
    pub mf1: f64,
    pub kappa: f64,
    pub accuracy: f64,
    pub specificity: f64,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<SegMetrics> {
    let k = cm.num_classes;
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("confusion matrix is empty"));
    }
    let total_f = total as f64;
    let row: Vec<u64> = (0..k).map(|i| (0..k).map(|j| cm.get(i, j)).sum()).collect();
    let col: Vec<u64> = (0..k).map(|j| (0..k).map(|i| cm.get(i, j)).sum()).collect();
    let trace: u64 = (0..k).map(|i| cm.get(i, i)).sum();

    let mut per_class_iou = Vec::with_capacity(k);
    let mut per_class_f1 = Vec::with_capacity(k);
    let mut spec_sum = 0.0;
    let mut spec_n = 0usize;
    for c in 0..k {
        let tp = cm.get(c, c) as f64;
        let fn_ = (row[c] - cm.get(c, c)) as f64;
        let fp = (col[c] - cm.get(c, c)) as f64;
        if row[c] > 0 {
            per_class_iou.push(Some(100.0 * tp / (tp + fp + fn_)));
            per_class_f1.push(Some(100.0 * 2.0 * tp / (2.0 * tp + fp + fn_)));
        } else {
            per_class_iou.push(None);
            per_class_f1.push(None);
        }
        let negatives = total - row[c];
        if negatives > 0 {
            let tn = negatives as f64 - fp;
            spec_sum += 100.0 * tn / negatives as f64;
            spec_n += 1;
        }
    }
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    let f1s: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    let mf1 = f1s.iter().sum::<f64>() / f1s.len() as f64;

    let p_o = trace as f64 / total_f;
    let p_e = row
        .iter()
        .zip(&col)
        .map(|(&r, &c)| r as f64 * c as f64)
        .sum::<f64>()
        / (total_f * total_f);
    // Chance agreement of 1 means a single class in both truth and prediction.
    let kappa = if p_e >= 1.0 { 100.0 } else { 100.0 * (p_o - p_e) / (1.0 - p_e) };

    Ok(SegMetrics {
        per_class_iou,
        per_class_f1,
        miou,
        mf1,
        kappa,
        accuracy: 100.0 * p_o,
        specificity: if spec_n > 0 { spec_sum / spec_n as f64 } else { 100.0 },
    })
}

impl SegMetrics {
    /// Plain-text table with two decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>8}\n", "metric", "value"));
        for (name, v) in [
            ("mIoU", self.miou),
            ("mF1", self.mf1),
            ("Kappa", self.kappa),
            ("Accuracy", self.accuracy),
            ("mSpec", self.specificity),
        ] {
            out.push_str(&format!("{name:<12} {v:>8.2}\n"));
        }
        for (c, (iou, f1)) in self.per_class_iou.iter().zip(&self.per_class_f1).enumerate() {
            let cell = |v: &Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
            out.push_str(&format!(
                "{:<12} {:>8} {:>8}\n",
                format!("class_{c}"),
                cell(iou),
                cell(f1)
            ));
        }
        out
    }
}
