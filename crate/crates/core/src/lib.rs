//! Learnable quantum-efficiency filter banks for hyperspectral segmentation.
//!
//! A [`FilterBankParams`] holds `F` filters of `P` asymmetric Gaussian peaks
//! each. [`evaluate_filter_bank`] turns it into an `F × C` response matrix,
//! [`apply_filter_bank`] integrates a `B × C × H × W` cube down to `F`
//! channels, and [`projection::backward`] returns exact parameter gradients.
//! [`training::train`] fits a bank and a small per-pixel head end to end.
//!
//! Also included: PCA/NMF baselines ([`classical`]), segmentation metrics
//! ([`metrics`]), a binary cube container and a synthetic data generator
//! ([`io`]).

pub mod classical;
pub mod cube;
pub mod error;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod projection;
pub mod regularization;
pub mod rng;
pub mod training;

pub use cube::{CubeDims, Hypercube, LabelMap, LabeledCube, ReducedCube, IGNORE_LABEL};
pub use error::{Error, Result};
pub use filter::{
    evaluate_filter_bank, evaluate_on_grid, normalize_wavelengths, FilterBankParams,
    FilterResponseMatrix, PeakParams, WavelengthRange, EPSILON,
};
pub use metrics::{compute_metrics, ConfusionMatrix, SegMetrics};
pub use projection::{apply_filter_bank, ParamGradients, PeakGrad};
pub use regularization::{total_reg, RegConfig, RegLosses};
