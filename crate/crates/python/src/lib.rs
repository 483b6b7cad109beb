//! Python bindings. Images cross the boundary as nested lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use confbench::explain::{ExplainContext, Method};
use confbench::harness::{run_cell, run_sweep, summary_text, EvalRow, SweepConfig};
use confbench::metrics::{ncc as ncc_value, roc_auc as auc_value, sensitivity_single, MetricConfig};
use confbench::nnlite::{
    load_checkpoint, save_checkpoint, train, ModelKind, ModelSpec, TrainConfig, TrainedClassifier,
};
use confbench::synthgen::{
    build_dataset, load_dataset, save_dataset, ConfounderKind, DatasetSpec, Split, SplitDataset,
};
use confbench::{ConfounderMask, Error, ImageGrid};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Row-major values plus `(height, width)`; rows must be equally long.
fn flatten<T>(rows: Vec<Vec<T>>) -> PyResult<(usize, usize, Vec<T>)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Ok((h, w, rows.into_iter().flatten().collect()))
}

fn to_grid(rows: Vec<Vec<f64>>) -> PyResult<ImageGrid> {
    let (h, w, values) = flatten(rows)?;
    ImageGrid::new(h, w, values).map_err(py_err)
}

fn to_rows(values: &[f64], width: usize) -> Vec<Vec<f64>> {
    values.chunks(width).map(<[f64]>::to_vec).collect()
}

fn parse_config(text: Option<&str>) -> PyResult<SweepConfig> {
    text.map_or_else(|| Ok(SweepConfig::default()), SweepConfig::parse)
        .map_err(py_err)
}

fn split_of(name: &str) -> PyResult<Split> {
    Split::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown split '{name}'")))
}

/// Train/val/test images with labels and confounder masks, plus the clean
/// counterpart of the test split.
#[pyclass(frozen)]
struct Dataset {
    inner: SplitDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (p, confounder = "tag", seed = 0, n_train = 1200, n_val = 150, n_test = 150, image_size = 64))]
    fn generate(
        p: u32,
        confounder: &str,
        seed: u64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        image_size: usize,
    ) -> PyResult<Self> {
        let spec = DatasetSpec {
            n_train,
            n_val,
            n_test,
            image_size,
            p,
            confounder: confounder.parse::<ConfounderKind>().map_err(py_err)?,
            seed,
            ..DatasetSpec::default()
        };
        Ok(Self {
            inner: build_dataset(&spec).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_dataset(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.train.len() + self.inner.val.len() + self.inner.test.len()
    }

    /// Number of examples in `split` ("train", "val" or "test").
    fn size(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.split(split_of(split)?).len())
    }

    fn labels(&self, split: &str) -> PyResult<Vec<u8>> {
        Ok(self.inner.split(split_of(split)?).iter().map(|e| e.label).collect())
    }

    fn confounded(&self, split: &str) -> PyResult<Vec<bool>> {
        Ok(self
            .inner
            .split(split_of(split)?)
            .iter()
            .map(|e| e.confounded)
            .collect())
    }

    /// Image `index` of `split`; `clean=True` returns it without the confounder.
    #[pyo3(signature = (split, index, clean = false))]
    fn image(&self, split: &str, index: usize, clean: bool) -> PyResult<Vec<Vec<f64>>> {
        let e = self
            .inner
            .split(split_of(split)?)
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        let img = if clean { &e.clean_image } else { &e.image };
        Ok(to_rows(img.values(), img.width()))
    }

    /// Confounder mask of `split[index]` as rows of booleans, or None.
    fn mask(&self, split: &str, index: usize) -> PyResult<Option<Vec<Vec<bool>>>> {
        let e = self
            .inner
            .split(split_of(split)?)
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok(e.mask
            .as_ref()
            .map(|m| m.bits().chunks(m.width()).map(<[bool]>::to_vec).collect()))
    }
}

/// A trained binary classifier (logit for the positive class).
#[pyclass(frozen)]
struct Classifier {
    inner: TrainedClassifier,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    #[pyo3(signature = (dataset, model = "tiny_cnn", epochs = 15, seed = 0, lr = 1e-3, batch_size = 32))]
    fn train(
        py: Python<'_>,
        dataset: &Dataset,
        model: &str,
        epochs: usize,
        seed: u64,
        lr: f64,
        batch_size: usize,
    ) -> PyResult<Self> {
        let kind: ModelKind = model.parse().map_err(py_err)?;
        let size = dataset
            .inner
            .train
            .first()
            .map(|e| e.image.height())
            .ok_or_else(|| PyValueError::new_err("empty training split"))?;
        let spec = match kind {
            ModelKind::TinyCnn => ModelSpec::tiny_cnn(size),
            ModelKind::Linear => ModelSpec::linear(size, size),
        };
        let cfg = TrainConfig {
            epochs,
            seed,
            lr,
            batch_size,
            ..TrainConfig::default()
        };
        let ds = &dataset.inner;
        let inner = py.detach(|| train(spec, ds, &cfg)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn val_auc(&self) -> Option<f64> {
        self.inner.val_auc
    }

    #[getter]
    fn epochs_run(&self) -> usize {
        self.inner.history.len()
    }

    fn logit(&self, image: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.logit(&to_grid(image)?).map_err(py_err)
    }

    fn predict_prob(&self, image: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.predict_prob(&to_grid(image)?).map_err(py_err)
    }

    /// Attribution map of `method` (gradient, guided, gradcam, lime, shap).
    /// LIME and SHAP replace switched-off segments with `baseline`, or
    /// mid-gray when it is omitted.
    #[pyo3(signature = (image, method = "shap", baseline = None, segments = 8, seed = 0))]
    fn explain(
        &self,
        py: Python<'_>,
        image: Vec<Vec<f64>>,
        method: &str,
        baseline: Option<Vec<Vec<f64>>>,
        segments: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let img = to_grid(image)?;
        let method: Method = method.parse().map_err(py_err)?;
        let base = match baseline {
            Some(b) => to_grid(b)?,
            None => ImageGrid::filled(img.height(), img.width(), 0.5),
        };
        let mut ctx = ExplainContext::new(base);
        ctx.segments_per_side = segments;
        ctx.lime.seed = seed;
        let model = &self.inner;
        let map = py.detach(|| ctx.explain(method, model, &img)).map_err(py_err)?;
        Ok(to_rows(map.values(), map.width()))
    }
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    auc_value(&scores, &labels).map_err(py_err)
}

/// Zero-normalized cross correlation; 0.0 when either map is constant.
#[pyfunction]
fn ncc(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let ((ha, wa, a), (hb, wb, b)) = (flatten(a)?, flatten(b)?);
    if (ha, wa) != (hb, wb) {
        return Err(PyValueError::new_err(format!("shapes {ha}x{wa} and {hb}x{wb} differ")));
    }
    ncc_value(&a, &b).map(|(v, _)| v).map_err(py_err)
}

/// Fraction of the mask covered by the top `top_frac` pixels by magnitude.
#[pyfunction]
#[pyo3(signature = (attribution, mask, top_frac = 0.1))]
fn confounder_sensitivity(attribution: Vec<Vec<f64>>, mask: Vec<Vec<bool>>, top_frac: f64) -> PyResult<f64> {
    let (_, _, values) = flatten(attribution)?;
    let (h, w, bits) = flatten(mask)?;
    let mask = ConfounderMask::new(h, w, bits).map_err(py_err)?;
    let cfg = MetricConfig {
        top_frac,
        ..MetricConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    sensitivity_single(&values, &mask, &cfg).map_err(py_err)
}

fn row_dict<'py>(py: Python<'py>, r: &EvalRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("confounder", &r.confounder)?;
    d.set_item("p", r.p)?;
    d.set_item("seed", r.seed)?;
    d.set_item("explainer", r.explainer.name())?;
    d.set_item("auc_conf", r.auc_conf)?;
    d.set_item("auc_clean", r.auc_clean)?;
    d.set_item("cs", r.cs)?;
    d.set_item("cs_pool", r.cs_pool)?;
    d.set_item("cs_fallback", r.cs_fallback)?;
    d.set_item("ncc", r.ncc)?;
    d.set_item("ncc_pool", r.ncc_pool)?;
    d.set_item("ncc_fallback", r.ncc_fallback)?;
    d.set_item("error", &r.error)?;
    Ok(d)
}

/// One (confounder, p, seed) cell; `config` is `key = value` text.
#[pyfunction]
#[pyo3(signature = (confounder, p, seed = 0, config = None))]
fn cell<'py>(
    py: Python<'py>,
    confounder: &str,
    p: u32,
    seed: u64,
    config: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = parse_config(config)?;
    let kind: ConfounderKind = confounder.parse().map_err(py_err)?;
    let out = py.detach(|| run_cell(&kind, p, seed, &cfg));
    out.rows.iter().map(|r| row_dict(py, r)).collect()
}

/// Full grid. Returns `(rows, summary_text)`.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn sweep<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<(Vec<Bound<'py, PyDict>>, String)> {
    let cfg = parse_config(config)?;
    let (report, _) = py.detach(|| run_sweep(&cfg)).map_err(py_err)?;
    let rows = report.rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    Ok((rows, summary_text(&report.summary)))
}

#[pymodule]
fn confbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(ncc, m)?)?;
    m.add_function(wrap_pyfunction!(confounder_sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(cell, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add("METHODS", Method::ALL.map(Method::name).to_vec())?;
    Ok(())
}
