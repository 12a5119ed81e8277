use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use starris_gl::codec::Decision;
use starris_gl::config::ConfigFile;
use starris_gl::dataset::{generate_dataset, Scenario, Split};
use starris_gl::flops::flops_report;
use starris_gl::pipeline::{self, GlModel};
use starris_gl::ris::Side;
use starris_gl::sweep::{self as sw, Axis, Scheme, SweepPlan};

fn py_err(e: starris_gl::Error) -> PyErr {
    match e {
        starris_gl::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(format!("[{}] {}", other.category(), other)),
    }
}

fn parse_schemes(names: Option<Vec<String>>) -> PyResult<Vec<Scheme>> {
    match names {
        None => Ok(Scheme::ALL.to_vec()),
        Some(v) => v.iter().map(|s| s.parse::<Scheme>().map_err(py_err)).collect(),
    }
}

/// Validated configuration tree.
#[pyclass(name = "Config", module = "starris_gl_py", frozen)]
struct PyConfig {
    inner: ConfigFile,
}

#[pymethods]
impl PyConfig {
    /// Parses TOML text (default config when omitted) and applies `key=value` overrides.
    #[new]
    #[pyo3(signature = (toml = None, overrides = Vec::new()))]
    fn new(toml: Option<&str>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ConfigFile::from_toml_with_overrides(toml.unwrap_or(""), &overrides).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: ConfigFile::load(&path, &overrides).map_err(py_err)? })
    }

    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Self::new(Some(&self.inner.to_toml_string()), overrides)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn shape_hash(&self) -> String {
        self.inner.shape_hash()
    }

    #[getter]
    fn bs_antennas(&self) -> usize {
        self.inner.system.bs_antennas
    }

    #[getter]
    fn ris_elements(&self) -> usize {
        self.inner.system.ris_horizontal * self.inner.system.ris_vertical
    }

    #[getter]
    fn transmit_power_dbm(&self) -> f64 {
        self.inner.system.transmit_power_dbm
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.experiment.seed
    }

    /// Pilot tensor shape `(M, N_p, N, K)`.
    fn tensor_shape(&self) -> PyResult<(usize, usize, usize, usize)> {
        let [a, b, c, d] = Scenario::new(&self.inner).map_err(py_err)?.tensor_shape();
        Ok((a, b, c, d))
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={})", &self.inner.hash()[..12])
    }
}

/// Labeled samples: pilot tensors plus coordinate-ascent targets.
#[pyclass(name = "Dataset", module = "starris_gl_py", frozen)]
struct PyDataset {
    inner: starris_gl::dataset::Dataset,
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&starris_gl::dataset::Sample> {
        self.inner.samples.get(i).ok_or_else(|| PyIndexError::new_err(format!("sample {i} out of range")))
    }
}

#[pymethods]
impl PyDataset {
    /// Draws `n` samples for `split` ("train", "test", "eval:<k>").
    #[staticmethod]
    #[pyo3(signature = (config, n, split = "train", seed = None))]
    fn generate(py: Python<'_>, config: &PyConfig, n: usize, split: &str, seed: Option<u64>) -> PyResult<Self> {
        let split = Split::parse(split).map_err(py_err)?;
        let file = config.inner.clone();
        let seed = seed.unwrap_or(file.experiment.seed);
        let inner = py
            .detach(move || Scenario::new(&file).and_then(|scn| generate_dataset(&scn, n, seed, split)))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: starris_gl::dataset::Dataset::load(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape_hash(&self) -> String {
        self.inner.shape_hash.clone()
    }

    fn mean_label_sum_rate(&self) -> f64 {
        self.inner.mean_label_sum_rate()
    }

    /// Flattened real view of sample `i`'s pilot tensor, shape `(2M, N_p, N, K)` row-major.
    fn features(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.sample(i)?.tensor.real_view())
    }

    fn targets(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.sample(i)?.targets.clone())
    }

    /// `(rate_r, rate_t, objective)` of the perfect-CSI label.
    fn label_rates(&self, i: usize) -> PyResult<(f64, f64, f64)> {
        let l = &self.sample(i)?.label;
        Ok((l.rate_r, l.rate_t, l.objective))
    }
}

fn decision_dict<'py>(py: Python<'py>, d: &Decision) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let w: Vec<(f64, f64)> = d.w.iter().map(|z| (z.re, z.im)).collect();
    out.set_item("w", w)?;
    out.set_item("theta_r", d.ris.theta(Side::Reflection).to_vec())?;
    out.set_item("theta_t", d.ris.theta(Side::Transmission).to_vec())?;
    out.set_item("alpha_r", d.ris.alpha(Side::Reflection).to_vec())?;
    out.set_item("alpha_t", d.ris.alpha(Side::Transmission).to_vec())?;
    out.set_item("degenerate_phases", d.degenerate_phases)?;
    out.set_item("zero_precoder", d.zero_precoder)?;
    Ok(out)
}

/// Trained Saab + RFT + GBDT predictor.
#[pyclass(name = "Model", module = "starris_gl_py", frozen)]
struct PyModel {
    inner: GlModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn train(py: Python<'_>, dataset: &PyDataset, config: &PyConfig) -> PyResult<Self> {
        let file = config.inner.clone();
        let ds = &dataset.inner;
        let inner = py.detach(|| pipeline::train(ds, &file)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: GlModel::load(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn shape_hash(&self) -> String {
        self.inner.shape_hash.clone()
    }

    /// Validation metrics as a dict.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner.metrics;
        let out = PyDict::new(py);
        out.set_item("n_train", m.n_train)?;
        out.set_item("n_validation", m.n_validation)?;
        out.set_item("feature_len", m.feature_len)?;
        out.set_item("selection_size", m.selection_size)?;
        out.set_item("validation_mse", m.validation_mse.clone())?;
        out.set_item("validation_mean_mse", m.validation_mean_mse.clone())?;
        Ok(out)
    }

    /// Predicts a decision for sample `i` of `dataset` from its pilot tensor alone.
    fn infer<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        i: usize,
        config: &PyConfig,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = config.inner.system().map_err(py_err)?;
        let d = pipeline::infer(&self.inner, &dataset.sample(i)?.tensor, &cfg).map_err(py_err)?;
        decision_dict(py, &d)
    }
}

/// Mean objective with a 95% interval per scheme on `n_eval` shared channels.
#[pyfunction]
#[pyo3(signature = (config, model = None, n_eval = None, schemes = None))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    model: Option<&PyModel>,
    n_eval: Option<usize>,
    schemes: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let schemes = parse_schemes(schemes)?;
    let file = &config.inner;
    let n = n_eval.unwrap_or(file.experiment.n_eval);
    let m = model.map(|m| &m.inner);
    let rows = py.detach(|| sw::evaluate_point(file, &schemes, m, n, file.experiment.seed)).map_err(py_err)?;
    let out = PyDict::new(py);
    for (s, e) in rows {
        out.set_item(s.label(), (e.mean, e.ci_low, e.ci_high, e.n))?;
    }
    Ok(out)
}

/// Runs a sweep over `axis` ("power", "elements", "distance") and returns the CSV text.
#[pyfunction]
#[pyo3(signature = (config, axis, values, model = None, n_eval = None, schemes = None))]
fn sweep(
    py: Python<'_>,
    config: &PyConfig,
    axis: &str,
    values: Vec<f64>,
    model: Option<&PyModel>,
    n_eval: Option<usize>,
    schemes: Option<Vec<String>>,
) -> PyResult<String> {
    let axis: Axis = axis.parse().map_err(py_err)?;
    let file = &config.inner;
    let mut plan = SweepPlan::new(axis, values, file);
    plan.schemes = parse_schemes(schemes)?;
    if let Some(n) = n_eval {
        plan.n_eval = n;
    }
    let m = model.map(|m| &m.inner);
    let report = py.detach(|| sw::run_sweep(file, &plan, m)).map_err(py_err)?;
    Ok(report.to_csv("python"))
}

/// FLOPs of GL inference and the BCD reference; nominal GL counts without a model.
#[pyfunction]
#[pyo3(signature = (config, model = None))]
fn flops<'py>(py: Python<'py>, config: &PyConfig, model: Option<&PyModel>) -> PyResult<Bound<'py, PyDict>> {
    let r = flops_report(model.map(|m| &m.inner), &config.inner, &config.inner.bcd).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("gl", r.gl())?;
    out.set_item("bcd", r.bcd())?;
    out.set_item("ratio", r.ratio())?;
    out.set_item("table", r.to_table())?;
    Ok(out)
}

/// `(name, passed, detail)` for every built-in check.
#[pyfunction]
fn selftest(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(starris_gl::selftest::run_selftest)
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

#[pyfunction]
fn derive_seed(master: u64, tags: Vec<u64>) -> u64 {
    starris_gl::seeds::derive_seed(master, &tags)
}

#[pymodule]
fn starris_gl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
