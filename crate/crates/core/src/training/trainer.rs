use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cube::{Hypercube, LabelMap, LabeledCube, ReducedCube};
use crate::error::{Error, Result};
use crate::filter::{evaluate_filter_bank, normalize_wavelengths, FilterBankParams, FilterResponseMatrix, WavelengthRange};
use crate::metrics::{compute_metrics, ConfusionMatrix};
use crate::projection::{apply_filter_bank, backward};
use crate::regularization::{total_reg, RegConfig, RegLosses};
use crate::rng;

use super::head::{HeadKind, SegHead};
use super::loss::{class_weights_inverse_frequency, seg_loss, total_loss};
use super::optim::{adam_step, AdamHyper, AdamState};

const SEED_FILTERS: u64 = 1;
const SEED_HEAD: u64 = 2;
const SEED_SHUFFLE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    Scheme(WeightScheme),
    Explicit(Vec<f64>),
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::Scheme(WeightScheme::InverseFrequency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Images per optimizer micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accumulation: usize,
    pub seed: u64,
    pub reg: RegConfig,
    pub class_weights: ClassWeights,
    pub weight_decay_filters: f64,
    pub weight_decay_head: f64,
    pub head: HeadKind,
    /// Wavelength range for normalization; defaults to the first and last
    /// training channel.
    pub range_nm: Option<[f64; 2]>,
    /// Run on a single thread.
    pub strict_deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 300,
            patience: 30,
            batch_size: 16,
            grad_accumulation: 1,
            seed: 42,
            reg: RegConfig::default(),
            class_weights: ClassWeights::default(),
            weight_decay_filters: 0.0,
            weight_decay_head: 1e-2,
            head: HeadKind::Linear,
            range_nm: None,
            strict_deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // Zero is allowed: a frozen run still exercises early stopping.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "need 1 <= patience <= max_epochs, got patience={} max_epochs={}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 {
            return Err(Error::config("batch_size and grad_accumulation must be >= 1"));
        }
        if self.weight_decay_filters < 0.0 || self.weight_decay_head < 0.0 {
            return Err(Error::config("weight decay must be non-negative"));
        }
        self.reg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seg_loss: f64,
    pub reg: RegLosses,
    pub total_loss: f64,
    pub train_miou: f64,
    pub val_miou: f64,
    pub centroids_out_of_range: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidRecord {
    pub epoch: usize,
    pub filter: usize,
    pub peak: usize,
    pub centroid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub num_filters: usize,
    pub peaks_per_filter: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub stopped_early: bool,
    /// Parameters at `best_epoch`.
    pub filter_bank: FilterBankParams,
    pub head: SegHead,
    /// Every centroid after every epoch; epoch 0 is the initialization.
    pub centroid_trajectory: Vec<CentroidRecord>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,seg_loss,L_dom,L_sep,L_bw,train_miou,val_miou`
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,seg_loss,L_dom,L_sep,L_bw,train_miou,val_miou\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.seg_loss, r.reg.dominance, r.reg.separation, r.reg.bandwidth, r.train_miou, r.val_miou
            );
        }
        out
    }

    /// `epoch,filter,peak,centroid`
    pub fn centroids_csv(&self) -> String {
        let mut out = String::from("epoch,filter,peak,centroid\n");
        for r in &self.centroid_trajectory {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.filter, r.peak, r.centroid);
        }
        out
    }

    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |r| r.epoch)
    }
}

/// Result of training a head on fixed, precomputed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub head: SegHead,
}

trait Batchable: Sized {
    fn images(&self) -> usize;
    fn pick(&self, idx: &[usize]) -> Result<Self>;
}

impl Batchable for Hypercube {
    fn images(&self) -> usize {
        self.dims().batch
    }

    fn pick(&self, idx: &[usize]) -> Result<Self> {
        self.select(idx)
    }
}

impl Batchable for ReducedCube {
    fn images(&self) -> usize {
        self.dims().batch
    }

    fn pick(&self, idx: &[usize]) -> Result<Self> {
        self.select(idx)
    }
}

/// The differentiable stage between raw input and head features.
trait FrontEnd: Clone {
    type Input: Batchable;
    type Cache;

    fn forward(&self, x: &Self::Input) -> Result<(ReducedCube, Self::Cache)>;
    fn backward(&self, x: &Self::Input, cache: &Self::Cache, d_features: &[f64]) -> Result<Vec<f64>>;
    fn regularization(&self, cfg: &RegConfig) -> (RegLosses, Vec<f64>);
    fn flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]) -> Result<()>;
    fn centroids(&self) -> Vec<(usize, usize, f64)>;
    fn out_of_range(&self) -> usize;
}

#[derive(Clone)]
struct LqeFrontEnd {
    bank: FilterBankParams,
    lambda: Vec<f64>,
}

impl FrontEnd for LqeFrontEnd {
    type Input = Hypercube;
    type Cache = FilterResponseMatrix;

    fn forward(&self, x: &Hypercube) -> Result<(ReducedCube, FilterResponseMatrix)> {
        let resp = evaluate_filter_bank(&self.bank, &self.lambda);
        let y = apply_filter_bank(x, &resp)?;
        Ok((y, resp))
    }

    fn backward(&self, x: &Hypercube, cache: &FilterResponseMatrix, d_features: &[f64]) -> Result<Vec<f64>> {
        Ok(backward(&self.bank, x, cache, d_features, false)?.0.to_flat())
    }

    fn regularization(&self, cfg: &RegConfig) -> (RegLosses, Vec<f64>) {
        let (l, g) = total_reg(&self.bank, cfg);
        (l, g.to_flat())
    }

    fn flat(&self) -> Vec<f64> {
        self.bank.to_flat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.bank.set_flat(flat)
    }

    fn centroids(&self) -> Vec<(usize, usize, f64)> {
        let np = self.bank.peaks_per_filter();
        self.bank
            .peaks()
            .iter()
            .enumerate()
            .map(|(i, pk)| (i / np, i % np, pk.centroid))
            .collect()
    }

    fn out_of_range(&self) -> usize {
        self.bank.centroids_out_of_range()
    }
}

#[derive(Clone)]
struct FixedFrontEnd;

impl FrontEnd for FixedFrontEnd {
    type Input = ReducedCube;
    type Cache = ();

    fn forward(&self, x: &ReducedCube) -> Result<(ReducedCube, ())> {
        Ok((x.clone(), ()))
    }

    fn backward(&self, _: &ReducedCube, _: &(), _: &[f64]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn regularization(&self, _: &RegConfig) -> (RegLosses, Vec<f64>) {
        (RegLosses::default(), Vec::new())
    }

    fn flat(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_flat(&mut self, _: &[f64]) -> Result<()> {
        Ok(())
    }

    fn centroids(&self) -> Vec<(usize, usize, f64)> {
        Vec::new()
    }

    fn out_of_range(&self) -> usize {
        0
    }
}

struct Outcome<FE> {
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    best_val_miou: f64,
    stopped_early: bool,
    front: FE,
    head: SegHead,
    trajectory: Vec<CentroidRecord>,
}

fn miou_of<FE: FrontEnd>(front: &FE, head: &SegHead, x: &FE::Input, labels: &LabelMap) -> Result<f64> {
    let (features, _) = front.forward(x)?;
    let pred = head.predict(&features)?;
    let mut cm = ConfusionMatrix::new(labels.num_classes());
    cm.accumulate(&pred, labels.data(), labels.ignore())?;
    Ok(compute_metrics(&cm).map_or(0.0, |m| m.miou))
}

fn resolve_class_weights(cfg: &ClassWeights, labels: &LabelMap) -> Result<Vec<f64>> {
    let k = labels.num_classes();
    match cfg {
        ClassWeights::Scheme(WeightScheme::InverseFrequency) => {
            Ok(class_weights_inverse_frequency(&labels.class_counts()))
        }
        ClassWeights::Scheme(WeightScheme::Uniform) => Ok(vec![1.0; k]),
        ClassWeights::Explicit(w) if w.len() == k && w.iter().all(|v| *v >= 0.0) => Ok(w.clone()),
        ClassWeights::Explicit(w) => Err(Error::config(format!(
            "{} class weights given for {k} classes (all must be >= 0)",
            w.len()
        ))),
    }
}

fn run<FE: FrontEnd>(
    mut front: FE,
    mut head: SegHead,
    train_x: &FE::Input,
    train_labels: &LabelMap,
    val_x: &FE::Input,
    val_labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<Outcome<FE>> {
    let weights = resolve_class_weights(&cfg.class_weights, train_labels)?;
    let n_front = front.flat().len();
    let mut front_state = AdamState::new(n_front);
    let mut head_state = AdamState::new(head.num_params());
    let front_hyper = AdamHyper::new(cfg.learning_rate, cfg.weight_decay_filters);
    let head_hyper = AdamHyper::new(cfg.learning_rate, cfg.weight_decay_head);
    let mut shuffle_rng = rng::seeded(rng::derive_seed(cfg.seed, SEED_SHUFFLE));

    let mut trajectory = Vec::new();
    let record_centroids = |front: &FE, epoch: usize, out: &mut Vec<CentroidRecord>| {
        out.extend(front.centroids().into_iter().map(|(filter, peak, centroid)| CentroidRecord {
            epoch,
            filter,
            peak,
            centroid,
        }));
    };
    record_centroids(&front, 0, &mut trajectory);

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, FE, SegHead)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_x.images()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut seg_sum = 0.0;
        let mut front_grad = vec![0.0; n_front];
        let mut head_grad = vec![0.0; head.num_params()];
        let mut pending = 0;
        let accum_scale = 1.0 / cfg.grad_accumulation as f64;

        for (i, chunk) in chunks.iter().enumerate() {
            let x = train_x.pick(chunk)?;
            let labels = train_labels.select(chunk)?;
            let (features, cache) = front.forward(&x)?;
            let (logits, acts) = head.forward(&features)?;
            let logit_dims = crate::cube::CubeDims {
                channels: head.num_classes,
                ..features.dims()
            };
            let loss = seg_loss(&logits, logit_dims, labels.data(), labels.ignore(), &weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            seg_sum += loss.total;
            let (d_head, d_features) = head.backward(&features, &acts, &loss.grad)?;
            let d_front = front.backward(&x, &cache, &d_features)?;
            for (a, b) in head_grad.iter_mut().zip(&d_head) {
                *a += accum_scale * b;
            }
            for (a, b) in front_grad.iter_mut().zip(&d_front) {
                *a += accum_scale * b;
            }
            pending += 1;

            if pending == cfg.grad_accumulation || i + 1 == chunks.len() {
                let (_, reg_grad) = front.regularization(&cfg.reg);
                for (a, b) in front_grad.iter_mut().zip(&reg_grad) {
                    *a += cfg.reg.lambda_reg * b;
                }
                let mut flat = front.flat();
                adam_step(&mut flat, &front_grad, &mut front_state, &front_hyper);
                front.set_flat(&flat)?;
                adam_step(&mut head.params, &head_grad, &mut head_state, &head_hyper);
                if flat.iter().chain(&head.params).any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { epoch });
                }
                front_grad.iter_mut().for_each(|v| *v = 0.0);
                head_grad.iter_mut().for_each(|v| *v = 0.0);
                pending = 0;
            }
        }

        let seg = seg_sum / chunks.len() as f64;
        let (reg, _) = front.regularization(&cfg.reg);
        let total = total_loss(seg, &reg, cfg.reg.lambda_reg);
        if !total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let train_miou = miou_of(&front, &head, train_x, train_labels)?;
        let val_miou = miou_of(&front, &head, val_x, val_labels)?;
        epochs.push(EpochRecord {
            epoch,
            seg_loss: seg,
            reg,
            total_loss: total,
            train_miou,
            val_miou,
            centroids_out_of_range: front.out_of_range(),
        });
        record_centroids(&front, epoch, &mut trajectory);

        if best.as_ref().is_none_or(|b| val_miou > b.1) {
            best = Some((epoch, val_miou, front.clone(), head.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_miou, front, head) = best.expect("at least one epoch runs");
    Ok(Outcome {
        epochs,
        best_epoch,
        best_val_miou,
        stopped_early,
        front,
        head,
        trajectory,
    })
}

fn in_pool<T: Send>(strict: bool, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if strict {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::config(format!("cannot build single-thread pool: {e}")))?;
        pool.install(job)
    } else {
        job()
    }
}

fn check_split(train: &LabeledCube, val: &LabeledCube) -> Result<()> {
    if train.num_images() == 0 || val.num_images() == 0 {
        return Err(Error::config("training and validation splits must be non-empty"));
    }
    if train.labels.num_classes() != val.labels.num_classes() {
        return Err(Error::config(format!(
            "train has K={} but val has K={}",
            train.labels.num_classes(),
            val.labels.num_classes()
        )));
    }
    if train.cube.wavelengths_nm() != val.cube.wavelengths_nm() {
        return Err(Error::config("train and val cubes use different channel wavelengths"));
    }
    Ok(())
}

/// Jointly train an `F × P` filter bank and a segmentation head.
pub fn train(
    train_set: &LabeledCube,
    val_set: &LabeledCube,
    num_filters: usize,
    peaks_per_filter: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_split(train_set, val_set)?;
    let wl = train_set.cube.wavelengths_nm();
    let range = match cfg.range_nm {
        Some([a, b]) => WavelengthRange::new(a, b)?,
        None => WavelengthRange::new(wl[0], wl[wl.len() - 1])?,
    };
    if num_filters >= wl.len() {
        return Err(Error::config(format!(
            "F = {num_filters} filters must be fewer than C = {} channels",
            wl.len()
        )));
    }
    let lambda = normalize_wavelengths(wl, &range)?;
    let bank = FilterBankParams::init(
        num_filters,
        peaks_per_filter,
        range,
        rng::derive_seed(cfg.seed, SEED_FILTERS),
    )?;
    let head = SegHead::init(
        cfg.head,
        num_filters,
        train_set.labels.num_classes(),
        rng::derive_seed(cfg.seed, SEED_HEAD),
    )?;
    let front = LqeFrontEnd { bank, lambda };
    let out = in_pool(cfg.strict_deterministic, || {
        run(
            front,
            head,
            &train_set.cube,
            &train_set.labels,
            &val_set.cube,
            &val_set.labels,
            cfg,
        )
    })?;
    Ok(TrainReport {
        num_filters,
        peaks_per_filter,
        epochs: out.epochs,
        best_epoch: out.best_epoch,
        best_val_miou: out.best_val_miou,
        stopped_early: out.stopped_early,
        filter_bank: out.front.bank,
        head: out.head,
        centroid_trajectory: out.trajectory,
    })
}

/// Train only a head on fixed features (e.g. a fitted PCA projection).
/// Regularization settings are ignored.
pub fn train_head(
    train_features: &ReducedCube,
    train_labels: &LabelMap,
    val_features: &ReducedCube,
    val_labels: &LabelMap,
    cfg: &TrainConfig,
) -> Result<HeadReport> {
    cfg.validate()?;
    if train_features.dims().batch == 0 || val_features.dims().batch == 0 {
        return Err(Error::config("training and validation splits must be non-empty"));
    }
    if train_features.dims().channels != val_features.dims().channels {
        return Err(Error::dim("train and val features differ in F"));
    }
    if train_labels.num_classes() != val_labels.num_classes() {
        return Err(Error::config("train and val label maps differ in K"));
    }
    let head = SegHead::init(
        cfg.head,
        train_features.dims().channels,
        train_labels.num_classes(),
        rng::derive_seed(cfg.seed, SEED_HEAD),
    )?;
    let out = in_pool(cfg.strict_deterministic, || {
        run(FixedFrontEnd, head, train_features, train_labels, val_features, val_labels, cfg)
    })?;
    Ok(HeadReport {
        epochs: out.epochs,
        best_epoch: out.best_epoch,
        best_val_miou: out.best_val_miou,
        head: out.head,
    })
}

/// Per-pixel class predictions, `B × H × W`.
pub fn predict(bank: &FilterBankParams, head: &SegHead, cube: &Hypercube) -> Result<Vec<u16>> {
    let lambda = normalize_wavelengths(cube.wavelengths_nm(), bank.range())?;
    let resp = evaluate_filter_bank(bank, &lambda);
    head.predict(&apply_filter_bank(cube, &resp)?)
}

pub fn predict_features(head: &SegHead, features: &ReducedCube) -> Result<Vec<u16>> {
    head.predict(features)
}
