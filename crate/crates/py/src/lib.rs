//! Python bindings. Arrays cross the boundary as flat lists in `B × C × H × W`
//! order; configs cross as JSON strings with the same schema the CLI reads.

use lqe_core::classical::{stratified_sample, ClassicalPipeline, DrMethod};
use lqe_core::io::{self, ExportGrid, SynthSpec, WavelengthGrid};
use lqe_core::training::{self, TrainConfig, TrainReport};
use lqe_core::{
    CubeDims, Error, FilterBankParams, LabeledCube, ReducedCube, WavelengthRange, IGNORE_LABEL,
};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("invalid JSON: {e}"))
}

#[pyclass(module = "lqe", name = "Hypercube", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHypercube {
    inner: lqe_core::Hypercube,
}

#[pymethods]
impl PyHypercube {
    #[new]
    fn new(dims: (usize, usize, usize, usize), wavelengths_nm: Vec<f64>, data: Vec<f64>) -> PyResult<Self> {
        let dims = CubeDims::new(dims.0, dims.1, dims.2, dims.3);
        Ok(Self { inner: lqe_core::Hypercube::new(dims, wavelengths_nm, data).map_err(to_py)? })
    }

    /// `(batch, channels, height, width)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.inner.dims();
        (d.batch, d.channels, d.height, d.width)
    }

    #[getter]
    fn wavelengths_nm(&self) -> Vec<f64> {
        self.inner.wavelengths_nm().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Hypercube(dims={:?})", self.dims())
    }
}

#[pyclass(module = "lqe", name = "LabelMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabelMap {
    inner: lqe_core::LabelMap,
}

#[pymethods]
impl PyLabelMap {
    #[new]
    #[pyo3(signature = (dims, num_classes, data, ignore=IGNORE_LABEL))]
    fn new(dims: (usize, usize, usize), num_classes: u16, data: Vec<u16>, ignore: u16) -> PyResult<Self> {
        let inner = lqe_core::LabelMap::new(dims.0, dims.1, dims.2, num_classes, ignore, data).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `(batch, height, width)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        (self.inner.batch(), self.inner.height(), self.inner.width())
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn ignore(&self) -> u16 {
        self.inner.ignore()
    }

    #[getter]
    fn data(&self) -> Vec<u16> {
        self.inner.data().to_vec()
    }

    fn class_counts(&self) -> Vec<u64> {
        self.inner.class_counts()
    }
}

#[pyclass(module = "lqe", name = "ReducedCube", frozen)]
struct PyReducedCube {
    inner: ReducedCube,
}

#[pymethods]
impl PyReducedCube {
    /// `(batch, features, height, width)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.inner.dims();
        (d.batch, d.channels, d.height, d.width)
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }
}

#[pyclass(module = "lqe", name = "FilterBank", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFilterBank {
    inner: FilterBankParams,
}

#[pymethods]
impl PyFilterBank {
    #[staticmethod]
    #[pyo3(signature = (num_filters, peaks_per_filter, start_nm, end_nm, seed=0))]
    fn init(num_filters: usize, peaks_per_filter: usize, start_nm: f64, end_nm: f64, seed: u64) -> PyResult<Self> {
        let range = WavelengthRange::new(start_nm, end_nm).map_err(to_py)?;
        let inner = FilterBankParams::init(num_filters, peaks_per_filter, range, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: FilterBankParams::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn num_filters(&self) -> usize {
        self.inner.num_filters()
    }

    #[getter]
    fn peaks_per_filter(&self) -> usize {
        self.inner.peaks_per_filter()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Raw parameters, `(centroid, log_bandwidth, amplitude_logit, skewness_raw)` per peak.
    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    /// Normalized centroid of each filter's highest-amplitude peak.
    fn dominant_centroids(&self) -> Vec<f64> {
        self.inner.dominant_centroids()
    }

    /// `F` rows of max-normalized responses at the given channel wavelengths.
    fn evaluate(&self, wavelengths_nm: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let lambda = lqe_core::normalize_wavelengths(&wavelengths_nm, self.inner.range()).map_err(to_py)?;
        let q = lqe_core::evaluate_filter_bank(&self.inner, &lambda);
        Ok((0..q.num_filters()).map(|f| q.row(f).to_vec()).collect())
    }

    fn apply(&self, cube: &PyHypercube) -> PyResult<PyReducedCube> {
        let lambda = lqe_core::normalize_wavelengths(cube.inner.wavelengths_nm(), self.inner.range()).map_err(to_py)?;
        let q = lqe_core::evaluate_filter_bank(&self.inner, &lambda);
        Ok(PyReducedCube { inner: lqe_core::apply_filter_bank(&cube.inner, &q).map_err(to_py)? })
    }

    /// CSV of responses on the dataset channels, or on `dense` evenly spaced points.
    #[pyo3(signature = (channels_nm, dense=None))]
    fn export_csv(&self, channels_nm: Vec<f64>, dense: Option<usize>) -> PyResult<String> {
        let grid = dense.map_or(ExportGrid::Channels, ExportGrid::Dense);
        io::export_filters(&self.inner, &channels_nm, &grid).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("FilterBank(F={}, P={})", self.inner.num_filters(), self.inner.peaks_per_filter())
    }
}

#[pyclass(module = "lqe", name = "TrainResult", frozen)]
struct PyTrainResult {
    report: TrainReport,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn best_val_miou(&self) -> f64 {
        self.report.best_val_miou
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.report.best_epoch
    }

    #[getter]
    fn epochs_run(&self) -> usize {
        self.report.last_epoch()
    }

    #[getter]
    fn stopped_early(&self) -> bool {
        self.report.stopped_early
    }

    #[getter]
    fn filter_bank(&self) -> PyFilterBank {
        PyFilterBank { inner: self.report.filter_bank.clone() }
    }

    fn report_json(&self) -> PyResult<String> {
        self.report.to_json().map_err(to_py)
    }

    fn epochs_csv(&self) -> String {
        self.report.epochs_csv()
    }

    fn centroids_csv(&self) -> String {
        self.report.centroids_csv()
    }

    /// Per-pixel class predictions, flat `B × H × W`.
    fn predict(&self, cube: &PyHypercube) -> PyResult<Vec<u16>> {
        training::predict(&self.report.filter_bank, &self.report.head, &cube.inner).map_err(to_py)
    }
}

fn labeled(cube: &PyHypercube, labels: &PyLabelMap) -> PyResult<LabeledCube> {
    LabeledCube::new(cube.inner.clone(), labels.inner.clone()).map_err(to_py)
}

/// Train a filter bank and head. `config` is a JSON training config; omitted
/// fields take their defaults.
#[pyfunction]
#[pyo3(signature = (train_cube, train_labels, val_cube, val_labels, num_filters, peaks_per_filter=1, config=None))]
fn train(
    py: Python<'_>,
    train_cube: &PyHypercube,
    train_labels: &PyLabelMap,
    val_cube: &PyHypercube,
    val_labels: &PyLabelMap,
    num_filters: usize,
    peaks_per_filter: usize,
    config: Option<&str>,
) -> PyResult<PyTrainResult> {
    let cfg: TrainConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => TrainConfig::default(),
    };
    let tr = labeled(train_cube, train_labels)?;
    let va = labeled(val_cube, val_labels)?;
    let report = py
        .detach(|| training::train(&tr, &va, num_filters, peaks_per_filter, &cfg))
        .map_err(to_py)?;
    Ok(PyTrainResult { report })
}

/// Segmentation metrics (percentages) for flat prediction and truth arrays.
#[pyfunction]
#[pyo3(signature = (pred, truth, num_classes, ignore=IGNORE_LABEL))]
fn compute_metrics<'py>(
    py: Python<'py>,
    pred: Vec<u16>,
    truth: Vec<u16>,
    num_classes: usize,
    ignore: u16,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cm = lqe_core::ConfusionMatrix::new(num_classes);
    cm.accumulate(&pred, &truth, ignore).map_err(to_py)?;
    let m = lqe_core::compute_metrics(&cm).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("miou", m.miou)?;
    out.set_item("mf1", m.mf1)?;
    out.set_item("kappa", m.kappa)?;
    out.set_item("accuracy", m.accuracy)?;
    out.set_item("specificity", m.specificity)?;
    out.set_item("per_class_iou", m.per_class_iou)?;
    out.set_item("per_class_f1", m.per_class_f1)?;
    Ok(out)
}

fn grid_named(name: &str) -> PyResult<WavelengthGrid> {
    match name {
        "hyko-like" => Ok(WavelengthGrid::HykoLike),
        "hsi-drive-like" => Ok(WavelengthGrid::HsiDriveLike),
        other => Err(PyValueError::new_err(format!(
            "unknown grid {other:?}; expected \"hyko-like\" or \"hsi-drive-like\""
        ))),
    }
}

/// JSON for the metameric task: classes differ only at `planted` (normalized) positions.
#[pyfunction]
#[pyo3(signature = (planted, seed=0, grid="hyko-like"))]
fn metameric_spec(planted: Vec<f64>, seed: u64, grid: &str) -> PyResult<String> {
    let spec = SynthSpec::metameric(grid_named(grid)?, &planted, seed).map_err(to_py)?;
    serde_json::to_string_pretty(&spec).map_err(json_err)
}

/// JSON for the control task whose discriminative bands also carry the most variance.
#[pyfunction]
#[pyo3(signature = (seed=0, grid="hyko-like"))]
fn variance_aligned_spec(seed: u64, grid: &str) -> PyResult<String> {
    let spec = SynthSpec::variance_aligned(grid_named(grid)?, seed).map_err(to_py)?;
    serde_json::to_string_pretty(&spec).map_err(json_err)
}

/// Returns `(train_cube, train_labels, val_cube, val_labels)`.
#[pyfunction]
fn gen_synthetic(py: Python<'_>, spec: &str) -> PyResult<(PyHypercube, PyLabelMap, PyHypercube, PyLabelMap)> {
    let spec: SynthSpec = serde_json::from_str(spec).map_err(json_err)?;
    let ds = py.detach(|| io::gen_synthetic(&spec)).map_err(to_py)?;
    Ok((
        PyHypercube { inner: ds.train.cube },
        PyLabelMap { inner: ds.train.labels },
        PyHypercube { inner: ds.val.cube },
        PyLabelMap { inner: ds.val.labels },
    ))
}

/// Returns `(cube, labels_or_None)`.
#[pyfunction]
fn read_cube(path: &str) -> PyResult<(PyHypercube, Option<PyLabelMap>)> {
    let (cube, labels) = io::read_cube(path).map_err(to_py)?;
    Ok((PyHypercube { inner: cube }, labels.map(|inner| PyLabelMap { inner })))
}

#[pyfunction]
#[pyo3(signature = (path, cube, labels=None))]
fn write_cube(path: &str, cube: &PyHypercube, labels: Option<&PyLabelMap>) -> PyResult<()> {
    io::write_cube(path, &cube.inner, labels.map(|l| &l.inner)).map_err(to_py)
}

#[pyclass(module = "lqe", name = "ClassicalPipeline", frozen)]
struct PyClassicalPipeline {
    inner: ClassicalPipeline,
}

#[pymethods]
impl PyClassicalPipeline {
    /// Fit standardization plus PCA or NMF on a class-balanced pixel sample.
    #[staticmethod]
    #[pyo3(signature = (cube, labels, num_components, method="pca", sample_size=10000, seed=0, max_iter=500, tol=1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        cube: &PyHypercube,
        labels: &PyLabelMap,
        num_components: usize,
        method: &str,
        sample_size: usize,
        seed: u64,
        max_iter: usize,
        tol: f64,
    ) -> PyResult<Self> {
        let method = match method {
            "pca" => DrMethod::Pca,
            "nmf" => DrMethod::Nmf { max_iter, tol },
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        };
        let sample = stratified_sample(&[labeled(cube, labels)?], sample_size, seed).map_err(to_py)?;
        let inner = ClassicalPipeline::fit(&sample.matrix, method, num_components, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ClassicalPipeline::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Components as `F` rows of `C` loadings.
    fn components(&self) -> Vec<Vec<f64>> {
        let p = &self.inner.projection;
        (0..p.num_components).map(|f| p.component(f).to_vec()).collect()
    }

    fn apply(&self, cube: &PyHypercube) -> PyResult<PyReducedCube> {
        Ok(PyReducedCube { inner: self.inner.apply(&cube.inner).map_err(to_py)? })
    }
}

#[pymodule]
fn lqe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHypercube>()?;
    m.add_class::<PyLabelMap>()?;
    m.add_class::<PyReducedCube>()?;
    m.add_class::<PyFilterBank>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PyClassicalPipeline>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(metameric_spec, m)?)?;
    m.add_function(wrap_pyfunction!(variance_aligned_spec, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(read_cube, m)?)?;
    m.add_function(wrap_pyfunction!(write_cube, m)?)?;
    Ok(())
}
