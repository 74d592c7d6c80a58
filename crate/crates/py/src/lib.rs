//! Python bindings: configuration, synthetic samples, training, inference,
//! metrics and the self-checks.

use std::path::PathBuf;

use dlg_core::checks::{
    gradcheck_model_config, gradcheck_options, gradcheck_sample, model_gradcheck, oracle_suite,
};
use dlg_core::config::{RunConfig, KEYS};
use dlg_core::data::{
    self, gen_synthetic_sample, DatasetManifest, LightFieldSample, SceneSpec, Split,
};
use dlg_core::metrics::{EvalResult, SaliencyPair};
use dlg_core::trainer::Trainer;
use dlg_core::{DlgError, SeededRng, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: DlgError) -> PyErr {
    match e {
        DlgError::Io { .. } => PyIOError::new_err(e.to_string()),
        DlgError::NonFinite(_) | DlgError::NonDeterministic(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Effective run configuration (`key=value` text).
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => RunConfig::parse(t).map_err(err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        KEYS.to_vec()
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key {key:?}")))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, recip.t={})",
            self.inner.seed, self.inner.model.steps
        )
    }
}

/// One focal stack with its all-focus image and binary mask.
#[pyclass(name = "Sample", from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: LightFieldSample,
}

fn flat(t: &Tensor) -> (Vec<usize>, Vec<f64>) {
    (
        t.shape().to_vec(),
        t.data().iter().map(|&v| v as f64).collect(),
    )
}

#[pymethods]
impl PySample {
    /// Random synthetic scene of `slices` focal slices.
    #[staticmethod]
    #[pyo3(signature = (height, width, slices, seed, blur_gain = 4.0))]
    fn synthetic(
        height: usize,
        width: usize,
        slices: usize,
        seed: u64,
        blur_gain: f64,
    ) -> PyResult<Self> {
        let mut rng = SeededRng::new(seed);
        let spec = SceneSpec::random(height, width, slices, blur_gain, &mut rng);
        Ok(Self {
            inner: gen_synthetic_sample(&spec, &mut rng).map_err(err)?,
        })
    }

    /// Sample directory written by `gen-data`.
    #[staticmethod]
    fn read(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::read_sample(&dir).map_err(err)?,
        })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn num_slices(&self) -> usize {
        self.inner.num_slices()
    }

    /// `(shape, values)` of the `[3,H,W]` all-focus image.
    fn allfocus(&self) -> (Vec<usize>, Vec<f64>) {
        flat(&self.inner.allfocus)
    }

    /// `(shape, values)` of the `[N,3,H,W]` slices.
    fn slices(&self) -> (Vec<usize>, Vec<f64>) {
        flat(&self.inner.slices)
    }

    /// `(shape, values)` of the `[1,H,W]` mask.
    fn gt(&self) -> (Vec<usize>, Vec<f64>) {
        flat(&self.inner.gt)
    }
}

fn unwrap_samples(samples: Vec<PySample>) -> Vec<LightFieldSample> {
    samples.into_iter().map(|s| s.inner).collect()
}

fn result_dict<'py>(py: Python<'py>, r: &EvalResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mae", r.mae)?;
    d.set_item("max_f", r.max_f)?;
    d.set_item("s", r.s_measure)?;
    d.set_item("max_e", r.max_e)?;
    Ok(d)
}

/// Model, optimizer state and schedule of one run.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    inner: Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyRunConfig) -> PyResult<Self> {
        let c = &config.inner;
        Ok(Self {
            inner: Trainer::new(&c.model, &c.train, c.seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(config: &PyRunConfig, path: PathBuf) -> PyResult<Self> {
        let c = &config.inner;
        Ok(Self {
            inner: Trainer::load(&c.model, &c.train, c.seed, &path).map_err(err)?,
        })
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.step()
    }

    /// One update; returns the total loss.
    fn train_step(&mut self, samples: Vec<PySample>) -> PyResult<f64> {
        let s = unwrap_samples(samples);
        Ok(self.inner.train_step(&s).map_err(err)?.total)
    }

    /// Train to the configured step count; returns the logged losses.
    #[pyo3(signature = (samples, out = None))]
    fn train(
        &mut self,
        samples: Vec<PySample>,
        out: Option<PathBuf>,
    ) -> PyResult<Vec<(usize, f64)>> {
        let s = unwrap_samples(samples);
        let curve = self.inner.train(&s, out.as_deref()).map_err(err)?;
        Ok(curve.iter().map(|r| (r.step, r.total)).collect())
    }

    /// `(height, width, values)` of the final saliency map.
    fn predict(&self, sample: &PySample) -> PyResult<(usize, usize, Vec<f64>)> {
        let p = self.inner.predict(&sample.inner).map_err(err)?;
        Ok((
            sample.inner.height(),
            sample.inner.width(),
            flat(&p.final_map).1,
        ))
    }

    /// Side maps of every reciprocative step, each as `(h, w, values)`.
    fn predict_steps(&self, sample: &PySample) -> PyResult<Vec<(usize, usize, Vec<f64>)>> {
        let p = self.inner.predict(&sample.inner).map_err(err)?;
        Ok(p.sides
            .iter()
            .map(|s| {
                let sh = s.shape();
                (sh[sh.len() - 2], sh[sh.len() - 1], flat(s).1)
            })
            .collect())
    }

    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        samples: Vec<PySample>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let s = unwrap_samples(samples);
        let r = self
            .inner
            .evaluate(&s)
            .and_then(|a| a.finish())
            .map_err(err)?;
        result_dict(py, &r)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn checkpoint_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.checkpoint_bytes())
    }
}

/// Write a synthetic dataset under `root` as configured by `config`.
#[pyfunction]
fn generate_dataset(root: PathBuf, config: &PyRunConfig) -> PyResult<usize> {
    let m = data::generate_dataset(&root, &config.inner.data, config.inner.seed).map_err(err)?;
    Ok(m.entries.len())
}

/// Samples of one split (`"train"` or `"test"`) of a dataset directory.
#[pyfunction]
fn load_split(root: PathBuf, split: &str) -> PyResult<Vec<PySample>> {
    let split: Split = split.parse().map_err(err)?;
    let m = DatasetManifest::load(&root).map_err(err)?;
    Ok(m.load_split(split)
        .map_err(err)?
        .into_iter()
        .map(|inner| PySample { inner })
        .collect())
}

/// MAE, max F, S and max E of one `height x width` prediction.
#[pyfunction]
fn evaluate_map<'py>(
    py: Python<'py>,
    height: usize,
    width: usize,
    pred: Vec<f64>,
    gt: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = SaliencyPair::from_values(height, width, pred, &gt).map_err(err)?;
    result_dict(py, &EvalResult::of(&p))
}

/// Largest difference between the fused DLG kernels and the dense oracle.
#[pyfunction]
#[pyo3(signature = (instances = 50, seed = 0))]
fn oracle_check(instances: usize, seed: u64) -> PyResult<f64> {
    Ok(oracle_suite(instances, seed).map_err(err)?.max_abs_diff)
}

/// Worst relative gradient error of the small unrolled model.
#[pyfunction]
#[pyo3(signature = (seed = 0, steps = 2))]
fn gradcheck(seed: u64, steps: usize) -> PyResult<f64> {
    let sample = gradcheck_sample(2, 16, seed).map_err(err)?;
    let r = model_gradcheck(
        &gradcheck_model_config(steps),
        &sample,
        &gradcheck_options(seed),
        seed,
    )
    .map_err(err)?;
    Ok(r.max_rel_error)
}

#[pymodule]
pub fn dlg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_split, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_map, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
