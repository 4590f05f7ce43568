//! Python bindings: dataset preparation, losses, models, training,
//! evaluation, experiments and reports. Tensors cross the boundary as nested
//! lists.

use std::path::PathBuf;

use ndarray::{Array2, Array4};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use texdistill::backbone::{self as bb, Init};
use texdistill::data_manifest as dm;
use texdistill::experiment::{self as ex, RunConfig};
use texdistill::image_pipeline::{CachedSource, DirectorySource};
use texdistill::objectives::{self as obj, LossConfig};
use texdistill::trainer::Method;
use texdistill::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Path { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("ragged logits"));
    }
    Array2::from_shape_vec((n, c), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run configuration; keyword arguments override the defaults.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

fn to_toml(v: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if v.is_instance_of::<PyBool>() {
        Ok(toml::Value::Boolean(v.extract()?))
    } else if v.is_instance_of::<PyInt>() {
        Ok(toml::Value::Integer(v.extract()?))
    } else if v.is_instance_of::<PyFloat>() {
        Ok(toml::Value::Float(v.extract()?))
    } else if v.is_instance_of::<PyString>() {
        Ok(toml::Value::String(v.extract()?))
    } else {
        Err(PyValueError::new_err(format!("unsupported config value {v}")))
    }
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = Self { inner: RunConfig::default() };
        match kwargs {
            Some(k) => base.replace(Some(k)),
            None => Ok(base),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_toml_str(text).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::load(path).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// A copy with the given fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let Some(kwargs) = kwargs else {
            return Ok(self.clone());
        };
        let mut table: toml::Table = toml::from_str(&self.inner.to_toml_string())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        for (k, v) in kwargs.iter() {
            table.insert(k.extract::<String>()?, to_toml(&v)?);
        }
        let inner: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.clone()
    }

    #[getter]
    fn total_steps(&self) -> usize {
        self.inner.total_steps
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("RunConfig({:?})", self.inner)
    }
}

/// A classifier with its parameters and class names.
#[pyclass(name = "Model")]
struct PyModel {
    inner: bb::Model<f32>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (arch, num_classes, seed=0, pretrained=None))]
    fn build(arch: &str, num_classes: usize, seed: u64, pretrained: Option<PathBuf>) -> PyResult<Self> {
        let init = pretrained.map_or(Init::Random(seed), Init::Pretrained);
        Ok(Self { inner: bb::build_model(arch, num_classes, &init).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: bb::load_checkpoint(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        bb::save_checkpoint(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch_id()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    fn set_class_names(&mut self, names: Vec<String>) -> PyResult<()> {
        self.inner.set_class_names(names).map_err(py_err)
    }

    /// Eval-mode logits for a batch given as `[n][3][h][w]` nested lists.
    fn logits(&self, batch: Vec<Vec<Vec<Vec<f32>>>>) -> PyResult<Vec<Vec<f32>>> {
        let n = batch.len();
        let c = batch.first().map_or(0, |x| x.len());
        let h = batch.first().and_then(|x| x.first()).map_or(0, |x| x.len());
        let w = batch.first().and_then(|x| x.first()).and_then(|x| x.first()).map_or(0, |x| x.len());
        let flat: Vec<f32> = batch.into_iter().flatten().flatten().flatten().collect();
        let x = Array4::from_shape_vec((n, c, h, w), flat).map_err(|_| PyValueError::new_err("ragged batch"))?;
        let z = self.inner.forward(&x).map_err(py_err)?;
        Ok(z.outer_iter().map(|r| r.to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(arch={:?}, num_classes={}, parameters={})",
            self.inner.arch_id(),
            self.inner.num_classes(),
            self.inner.num_parameters()
        )
    }
}

/// A train or test split manifest.
#[pyclass(name = "SplitManifest")]
struct PyManifest {
    inner: dm::SplitManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: dm::read_manifest(path).map_err(py_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        dm::write_manifest(&self.inner, path).map_err(py_err)
    }

    fn render(&self) -> String {
        dm::render_manifest(&self.inner)
    }

    /// Class-balanced subset of this (train, 100%) manifest.
    fn sample(&self, percentage: u32, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: dm::sample_low_data(&self.inner, percentage, seed).map_err(py_err)? })
    }

    #[getter]
    fn entries(&self) -> Vec<(String, usize)> {
        ex::manifest_pairs(&self.inner)
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes.clone()
    }

    #[getter]
    fn role(&self) -> String {
        self.inner.role.to_string()
    }

    #[getter]
    fn percentage(&self) -> u32 {
        self.inner.percentage
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn per_class_count(&self) -> usize {
        self.inner.per_class_count
    }

    #[getter]
    fn root(&self) -> Option<String> {
        self.inner.root.clone()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Procedural texture dataset; returns the root.
#[pyfunction]
#[pyo3(signature = (classes, per_class, size, seed, out))]
fn synth_data(classes: usize, per_class: usize, size: usize, seed: u64, out: PathBuf) -> PyResult<String> {
    let root = ex::generate_synthetic_texture_dataset(classes, per_class, size, seed, out).map_err(py_err)?;
    Ok(root.display().to_string())
}

/// Fixed 50/50 split of a balanced class-per-folder dataset.
#[pyfunction]
#[pyo3(signature = (root, dataset_id="dataset", seed=0))]
fn split_dataset(root: PathBuf, dataset_id: &str, seed: u64) -> PyResult<(PyManifest, PyManifest)> {
    let index = dm::scan_dataset(root).map_err(py_err)?;
    let (train, test) = dm::stratified_split(&index, dataset_id, seed).map_err(py_err)?;
    Ok((PyManifest { inner: train }, PyManifest { inner: test }))
}

#[pyfunction]
fn per_class_count(base: usize, percentage: u32) -> PyResult<usize> {
    dm::per_class_count(base, percentage).map_err(py_err)
}

#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    obj::cross_entropy(matrix(logits)?.view(), &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (logits, labels, gamma=2.0))]
fn focal_loss(logits: Vec<Vec<f64>>, labels: Vec<usize>, gamma: f64) -> PyResult<f64> {
    obj::focal_loss(matrix(logits)?.view(), &labels, gamma).map_err(py_err)
}

#[pyfunction]
fn teacher_hard_label(logits: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    Ok(obj::teacher_hard_label(matrix(logits)?.view()))
}

#[pyfunction]
#[pyo3(signature = (n_im_per_class, n_min=20))]
fn select_variant(n_im_per_class: usize, n_min: usize) -> String {
    obj::select_variant(n_im_per_class, &LossConfig { n_min, ..Default::default() }).to_string()
}

#[pyfunction]
#[pyo3(signature = (l_main, l_dist, alpha=0.1))]
fn total_loss(l_main: f64, l_dist: f64, alpha: f64) -> f64 {
    obj::total_loss(l_main, l_dist, &LossConfig { alpha, ..Default::default() })
}

/// Trains on a manifest, writes `checkpoint`, returns the loss history.
#[pyfunction]
#[pyo3(signature = (manifest, config, checkpoint, root=None))]
fn train<'py>(
    py: Python<'py>,
    manifest: &PyManifest,
    config: &PyRunConfig,
    checkpoint: PathBuf,
    root: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let root = root
        .or_else(|| manifest.inner.resolve_root(None))
        .ok_or_else(|| PyValueError::new_err("manifest has no root; pass root="))?;
    let m = manifest.inner.clone();
    let cfg = config.inner.clone();
    let outcome = py
        .detach(move || ex::train_from_manifest(&m, &root, &cfg, &checkpoint, None))
        .map_err(py_err)?;
    outcome
        .state
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("l_main", r.l_main)?;
            d.set_item("l_dist", r.l_dist)?;
            d.set_item("total", r.total)?;
            d.set_item("variant", r.dist_variant.map(|v| v.to_string()))?;
            Ok(d)
        })
        .collect()
}

/// Accuracy, per-class accuracy and confusion counts of a model.
#[pyfunction]
#[pyo3(signature = (model, manifest, config=None, root=None))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    manifest: &PyManifest,
    config: Option<&PyRunConfig>,
    root: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let root = root
        .or_else(|| manifest.inner.resolve_root(None))
        .ok_or_else(|| PyValueError::new_err("manifest has no root; pass root="))?;
    let cfg = config.map_or_else(RunConfig::default, |c| c.inner.clone());
    let source = CachedSource::new(DirectorySource::new(root));
    let ev = ex::evaluate(&model.inner, &manifest.inner, &source, &cfg.pipeline_config(), cfg.batch_size)
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", ev.accuracy)?;
    d.set_item("per_class_accuracy", ev.per_class_accuracy)?;
    d.set_item("confusion", ev.confusion)?;
    Ok(d)
}

/// Runs every (method, percentage, seed) combination; returns aggregate rows.
#[pyfunction]
#[pyo3(signature = (root, results_dir, methods, percentages, seeds, config, split_seed=0, dataset_id="dataset"))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    root: PathBuf,
    results_dir: PathBuf,
    methods: Vec<String>,
    percentages: Vec<u32>,
    seeds: Vec<u64>,
    config: &PyRunConfig,
    split_seed: u64,
    dataset_id: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let spec = ex::ExperimentSpec {
        dataset_root: root,
        results_dir,
        dataset_id: dataset_id.to_string(),
        methods,
        percentages,
        seeds,
        split_seed,
        config: config.inner.clone(),
        keep_checkpoints: false,
    };
    let out = py.detach(move || ex::run_experiment(&spec)).map_err(py_err)?;
    out.aggregates
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", r.method.to_string())?;
            d.set_item("percentage", r.percentage)?;
            d.set_item("mean_accuracy", r.mean_accuracy)?;
            d.set_item("std_accuracy", r.std_accuracy)?;
            d.set_item("n_seeds", r.n_seeds)?;
            Ok(d)
        })
        .collect()
}

/// Renders tables and confusion matrices; returns the table text.
#[pyfunction]
fn report(results_dir: PathBuf) -> PyResult<String> {
    let files = ex::report(&results_dir).map_err(py_err)?;
    std::fs::read_to_string(&files.table_txt).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "texdistill")]
fn texdistill_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(split_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_count, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(teacher_hard_label, m)?)?;
    m.add_function(wrap_pyfunction!(select_variant, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
