//! Python bindings: presets, the measurement model, dataset generation and the learner.

use crlearn::fisher::{query_fisher, XI};
use crlearn::hal::{run_learner as learn, LearnerConfig, Scenario};
use crlearn::metrics::normalized_error;
use crlearn::model::{j_to_lambda, lambda_to_j};
use crlearn::noise::noisy_likelihood;
use crlearn::oracle::{generate_dataset as generate, StreamPurpose};
use crlearn::{GrowthPolicy, JParams, LambdaParams, Measurement, NoiseModel, Preparation, Query, QuerySpace, RngStream, Simulator};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn value_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn query(meas: &str, prep: usize, t: f64) -> PyResult<Query> {
    let m = Measurement::from_label(meas).ok_or_else(|| value_error(format!("measurement must be X, Y or Z, got {meas:?}")))?;
    let p = Preparation::from_block(prep).ok_or_else(|| value_error(format!("preparation must be 0 or 1, got {prep}")))?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(value_error(format!("time must be finite and non-negative, got {t}")));
    }
    Ok(Query::new(m, p, t))
}

fn lambda_dict<'py>(py: Python<'py>, l: &LambdaParams) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, v) in LambdaParams::NAMES.iter().zip(l.to_array()) {
        d.set_item(name, v)?;
    }
    Ok(d)
}

/// A two-qubit device: Hamiltonian parameters plus noise model.
#[pyclass(module = "crlearn_py", skip_from_py_object)]
#[derive(Clone)]
struct Device {
    theta: LambdaParams,
    noise: NoiseModel,
}

#[pymethods]
impl Device {
    /// Device from six J coefficients `[IX, IY, IZ, ZX, ZY, ZZ]` (rad/s) and an optional noise model as JSON.
    #[new]
    #[pyo3(signature = (j, noise_json=None))]
    fn new(j: [f64; 6], noise_json: Option<&str>) -> PyResult<Self> {
        let noise = match noise_json {
            Some(text) => serde_json::from_str::<NoiseModel>(text).map_err(value_error)?,
            None => NoiseModel::noiseless(),
        };
        noise.validate().map_err(value_error)?;
        Ok(Self { theta: j_to_lambda(&JParams::from_array(j)), noise })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p = crlearn::config::preset(name).map_err(value_error)?;
        Ok(Self { theta: p.lambda(), noise: p.noise })
    }

    #[getter]
    fn j(&self) -> [f64; 6] {
        lambda_to_j(&self.theta).to_array()
    }

    #[getter]
    fn lambda_params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        lambda_dict(py, &self.theta)
    }

    fn noise_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.noise).map_err(value_error)
    }

    /// Probability of reading out 0 for one query.
    fn likelihood(&self, meas: &str, prep: usize, t: f64) -> PyResult<f64> {
        Ok(noisy_likelihood(&self.theta, &self.noise, &query(meas, prep, t)?))
    }

    /// Per-query Fisher information in the Lambda coordinates, as a 6x6 nested list.
    fn fisher(&self, meas: &str, prep: usize, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let f = query_fisher(&self.theta, &self.noise, &query(meas, prep, t)?);
        Ok((0..6).map(|i| (0..6).map(|k| f[(i, k)]).collect()).collect())
    }

    /// Writes a simulated fixed-shot dataset and returns the number of records.
    #[pyo3(signature = (path, shots_per_query, seed, t_min=1e-7, t_max=6e-7, n_times=81))]
    fn generate_dataset(&self, path: PathBuf, shots_per_query: usize, seed: u64, t_min: f64, t_max: f64, n_times: usize) -> PyResult<usize> {
        let space = QuerySpace::uniform_grid(t_min, t_max, n_times, GrowthPolicy::Fixed).map_err(value_error)?;
        let mut rng = RngStream::for_run(seed, 0, StreamPurpose::Dataset);
        let d = generate(&self.theta, &self.noise, &space, shots_per_query, &mut rng).map_err(value_error)?;
        d.save(&path).map_err(value_error)?;
        Ok(d.total_remaining())
    }

    /// Runs one learner against a simulation of this device.
    ///
    /// `config_json` holds learner settings (same keys as the CLI's `learner` block).
    /// Returns one dict per round with `round`, `n_tot`, `j`, `lambda` and `error`.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (scenario, seed, config_json=None, t_min=1e-7, t_max=6e-7, n_times=81))]
    fn learn<'py>(
        &self,
        py: Python<'py>,
        scenario: &str,
        seed: u64,
        config_json: Option<&str>,
        t_min: f64,
        t_max: f64,
        n_times: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let scenario: Scenario = serde_json::from_value(serde_json::Value::String(scenario.into())).map_err(value_error)?;
        let cfg: LearnerConfig = serde_json::from_str(config_json.unwrap_or("{}")).map_err(value_error)?;
        let cfg = LearnerConfig { scenario, ..cfg };
        if cfg.param_mask.is_some() {
            return Err(value_error("parameter masks are not supported here"));
        }
        let space = QuerySpace::uniform_grid(t_min, t_max, n_times, GrowthPolicy::Fixed).map_err(value_error)?;
        cfg.validate(&space).map_err(value_error)?;
        let mut oracle = Simulator::new(self.theta, self.noise.clone());
        let mut rng = RngStream::for_run(seed, 0, StreamPurpose::Learner);
        let (noise, theta) = (self.noise.clone(), self.theta);
        let record = py
            .detach(move || learn(&mut oracle, &noise, &space, &cfg, None, &mut rng))
            .map_err(|f| value_error(f.error))?;
        let truth = lambda_to_j(&theta).to_array();
        record
            .rounds
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                let j = r.estimate_j.to_array();
                d.set_item("round", r.round)?;
                d.set_item("n_tot", r.n_tot)?;
                d.set_item("j", j)?;
                d.set_item("lambda", lambda_dict(py, &r.estimate)?)?;
                d.set_item("error", normalized_error(&j, &truth, &[XI; 6]))?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Device(j={:?})", self.j())
    }
}

#[pyfunction]
fn preset_names() -> Vec<String> {
    crlearn::config::preset_names()
}

#[pymodule]
fn crlearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Device>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
