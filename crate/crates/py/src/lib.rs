//! Python bindings for `ringfl_core`.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ringfl_core::aco::{self, AcoOutcome as CoreOutcome, AcoParams as CoreAcoParams};
use ringfl_core::aggregation::{self, FailureSchedule, ParameterSet};
use ringfl_core::experiments::{self, PlacementModel, PlacementSize, SweepSpec};
use ringfl_core::radio::{self, Placement as CorePlacement, Point, ScenarioConfig as CoreConfig};
use ringfl_core::timing::{self, RoundTiming as CoreTiming};
use ringfl_core::topology::{self, RingTopology as CoreRing};
use ringfl_core::Error;

create_exception!(ringfl, InfeasibleLinkError, PyException, "A link has zero achievable rate.");
create_exception!(ringfl, AggregationError, PyException, "The base station cannot rebuild the global model.");

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err.root() {
        Error::InvalidArgument(_) | Error::Json(_) | Error::Csv(_) => PyValueError::new_err(msg),
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(msg),
        Error::Infeasible { .. } => InfeasibleLinkError::new_err(msg),
        Error::IncompleteAggregation { .. } | Error::ToleranceExceeded { .. } => AggregationError::new_err(msg),
        Error::Io(_) | Error::Scenario { .. } => PyOSError::new_err(msg),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for ringfl_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn json_to_python<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Physical and protocol constants. Accepts the same keys as the JSON scenario `config`.
#[pyclass(name = "ScenarioConfig", module = "ringfl", from_py_object)]
#[derive(Clone)]
pub struct PyScenarioConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyScenarioConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner: CoreConfig = match json {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => CoreConfig::default(),
        };
        inner.validate().py()?;
        Ok(PyScenarioConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn area_side(&self) -> f64 {
        self.inner.area_side
    }

    #[getter]
    fn bs_position(&self) -> (f64, f64) {
        (self.inner.bs_position.x, self.inner.bs_position.y)
    }

    #[getter]
    fn path_loss_exponent(&self) -> f64 {
        self.inner.path_loss_exponent
    }

    #[getter]
    fn noise_power(&self) -> f64 {
        self.inner.noise_power
    }

    #[getter]
    fn tx_power(&self) -> f64 {
        self.inner.tx_power
    }

    #[getter]
    fn total_bandwidth(&self) -> f64 {
        self.inner.total_bandwidth
    }

    #[getter]
    fn model_size(&self) -> f64 {
        self.inner.model_size
    }

    #[getter]
    fn min_distance(&self) -> f64 {
        self.inner.min_distance
    }

    #[getter]
    fn failure_prob(&self) -> f64 {
        self.inner.failure_prob
    }

    fn snr_at(&self, distance: f64) -> f64 {
        self.inner.snr_at(distance)
    }

    fn __repr__(&self) -> String {
        format!("ScenarioConfig({})", self.to_json().unwrap_or_default())
    }
}

/// Base station plus devices `1..=K`; index 0 is the base station.
#[pyclass(name = "Placement", module = "ringfl", from_py_object)]
#[derive(Clone)]
pub struct PyPlacement {
    inner: CorePlacement,
}

#[pymethods]
impl PyPlacement {
    #[new]
    #[pyo3(signature = (devices, config = None))]
    fn new(devices: Vec<(f64, f64)>, config: Option<PyScenarioConfig>) -> PyResult<Self> {
        let config = config.map(|c| c.inner).unwrap_or_default();
        let devices = devices.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        Ok(PyPlacement { inner: CorePlacement::with_config(&config, devices).py()? })
    }

    /// `count` devices uniformly in the configured square.
    #[staticmethod]
    #[pyo3(signature = (count, seed, config = None))]
    fn random(count: usize, seed: u64, config: Option<PyScenarioConfig>) -> PyResult<Self> {
        let config = config.map(|c| c.inner).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = experiments::sample_placement(PlacementModel::UniformSquare, &config, PlacementSize::Count(count), &mut rng)
            .py()?;
        Ok(PyPlacement { inner: s.placement })
    }

    #[getter]
    fn device_count(&self) -> usize {
        self.inner.device_count()
    }

    #[getter]
    fn devices(&self) -> Vec<(f64, f64)> {
        self.inner.devices().iter().map(|p| (p.x, p.y)).collect()
    }

    fn distance(&self, i: usize, j: usize) -> PyResult<f64> {
        self.inner.distance(i, j).py()
    }

    fn __len__(&self) -> usize {
        self.inner.device_count()
    }
}

/// Successor list `next[k-1] = r(k)` over devices `1..=K`.
#[pyclass(name = "RingTopology", module = "ringfl", eq, from_py_object)]
#[derive(Clone, PartialEq)]
pub struct PyRing {
    inner: CoreRing,
}

#[pymethods]
impl PyRing {
    #[new]
    fn new(next: Vec<usize>) -> PyResult<Self> {
        Ok(PyRing { inner: CoreRing::try_from(next).py()? })
    }

    #[staticmethod]
    fn from_order(order: Vec<usize>) -> PyResult<Self> {
        Ok(PyRing { inner: CoreRing::from_order(&order).py()? })
    }

    #[getter]
    fn next(&self) -> Vec<usize> {
        self.inner.next_slice().to_vec()
    }

    fn order(&self) -> Vec<usize> {
        self.inner.order()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().collect()
    }

    fn reversed(&self) -> Self {
        PyRing { inner: self.inner.reversed() }
    }

    fn __len__(&self) -> usize {
        self.inner.device_count()
    }

    fn __repr__(&self) -> String {
        format!("RingTopology({:?})", self.inner.next_slice())
    }
}

#[pyclass(name = "AcoParams", module = "ringfl", from_py_object)]
#[derive(Clone)]
pub struct PyAcoParams {
    inner: CoreAcoParams,
}

#[pymethods]
impl PyAcoParams {
    #[new]
    #[pyo3(signature = (beta = 2.0, gamma = 2.0, rho = 0.8, ants_per_device = 10, max_iterations = 30, rng_seed = 0))]
    fn new(beta: f64, gamma: f64, rho: f64, ants_per_device: usize, max_iterations: usize, rng_seed: u64) -> PyResult<Self> {
        let inner = CoreAcoParams { beta, gamma, rho, ants_per_device, max_iterations, rng_seed };
        inner.validate().py()?;
        Ok(PyAcoParams { inner })
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "AcoParams(beta={}, gamma={}, rho={}, ants_per_device={}, max_iterations={}, rng_seed={})",
            p.beta, p.gamma, p.rho, p.ants_per_device, p.max_iterations, p.rng_seed
        )
    }
}

#[pyclass(name = "AcoOutcome", module = "ringfl", skip_from_py_object)]
pub struct PyAcoOutcome {
    inner: CoreOutcome,
}

#[pymethods]
impl PyAcoOutcome {
    #[getter]
    fn ring(&self) -> PyRing {
        PyRing { inner: self.inner.ring.clone() }
    }

    #[getter]
    fn t_sr(&self) -> f64 {
        self.inner.t_sr
    }

    #[getter]
    fn greedy_ring(&self) -> PyRing {
        PyRing { inner: self.inner.greedy_ring.clone() }
    }

    #[getter]
    fn greedy_t_sr(&self) -> f64 {
        self.inner.greedy_t_sr
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.clone()
    }

    fn improvement_percent(&self) -> f64 {
        self.inner.improvement_percent()
    }
}

#[pyclass(name = "RoundTiming", module = "ringfl", skip_from_py_object)]
pub struct PyRoundTiming {
    inner: CoreTiming,
}

#[pymethods]
impl PyRoundTiming {
    #[getter]
    fn t_total(&self) -> f64 {
        self.inner.t_total
    }

    #[getter]
    fn t_sr(&self) -> f64 {
        self.inner.t_sr
    }

    #[getter]
    fn t_ag(&self) -> f64 {
        self.inner.t_ag
    }

    #[getter]
    fn bottleneck_link(&self) -> (usize, usize) {
        self.inner.bottleneck_link
    }

    fn __repr__(&self) -> String {
        format!("RoundTiming(t_total={}, t_sr={}, t_ag={})", self.inner.t_total, self.inner.t_sr, self.inner.t_ag)
    }
}

#[pyfunction]
fn snr(placement: &PyPlacement, config: &PyScenarioConfig, i: usize, j: usize) -> PyResult<f64> {
    radio::snr(&placement.inner, &config.inner, i, j).py()
}

/// Min-max bandwidth split, returned as `{transmitter: Hz}`.
#[pyfunction]
fn allocate_bandwidth(
    links: Vec<(usize, usize)>,
    placement: &PyPlacement,
    config: &PyScenarioConfig,
) -> PyResult<BTreeMap<usize, f64>> {
    Ok(radio::allocate_bandwidth(&links, &placement.inner, &config.inner).py()?.per_link_bandwidth)
}

#[pyfunction]
fn validate_ring(next: Vec<usize>, k: usize) -> bool {
    topology::validate_ring(&CoreRing::from_next(next), k)
}

#[pyfunction]
fn greedy_ring(placement: &PyPlacement, config: &PyScenarioConfig) -> PyResult<PyRing> {
    Ok(PyRing { inner: topology::greedy_ring(&placement.inner, &config.inner).py()? })
}

#[pyfunction]
fn brute_force_ring(placement: &PyPlacement, config: &PyScenarioConfig) -> PyResult<(PyRing, f64)> {
    let (ring, t) = topology::brute_force_ring(&placement.inner, &config.inner).py()?;
    Ok((PyRing { inner: ring }, t))
}

#[pyfunction]
#[pyo3(signature = (placement, config, params = None))]
fn optimize_ring(
    py: Python<'_>,
    placement: &PyPlacement,
    config: &PyScenarioConfig,
    params: Option<PyAcoParams>,
) -> PyResult<PyAcoOutcome> {
    let params = params.map(|p| p.inner).unwrap_or_default();
    let (p, c) = (&placement.inner, &config.inner);
    let inner = py.detach(|| aco::optimize_ring(p, c, &params)).py()?;
    Ok(PyAcoOutcome { inner })
}

#[pyfunction]
fn t_star(placement: &PyPlacement, config: &PyScenarioConfig) -> PyResult<PyRoundTiming> {
    Ok(PyRoundTiming { inner: timing::t_star(&placement.inner, &config.inner).py()? })
}

#[pyfunction]
fn t_scatter_reduce(placement: &PyPlacement, config: &PyScenarioConfig, ring: &PyRing) -> PyResult<(f64, (usize, usize))> {
    timing::t_scatter_reduce(&placement.inner, &config.inner, &ring.inner).py()
}

#[pyfunction]
#[pyo3(signature = (placement, config, ring, failure_counts = None))]
fn t_mrar(
    placement: &PyPlacement,
    config: &PyScenarioConfig,
    ring: &PyRing,
    failure_counts: Option<Vec<u32>>,
) -> PyResult<PyRoundTiming> {
    let counts = failure_counts.unwrap_or_else(|| vec![0; placement.inner.device_count()]);
    Ok(PyRoundTiming { inner: timing::t_mrar(&placement.inner, &config.inner, &ring.inner, &counts).py()? })
}

#[pyfunction]
fn expected_t_star(config: &PyScenarioConfig, lam: f64, disc_radius: f64) -> PyResult<f64> {
    timing::expected_t_star(&config.inner, lam, disc_radius).py()
}

#[pyfunction]
fn expected_t_sr_upper_bound(config: &PyScenarioConfig, lam: f64, disc_radius: f64) -> PyResult<f64> {
    timing::expected_t_sr_upper_bound(&config.inner, lam, disc_radius).py()
}

#[pyfunction]
#[pyo3(signature = (config, lam, disc_radius, expected_recovery = 0.0))]
fn expected_t_ag(config: &PyScenarioConfig, lam: f64, disc_radius: f64, expected_recovery: f64) -> PyResult<f64> {
    timing::expected_t_ag(&config.inner, lam, disc_radius, expected_recovery).py()
}

#[pyfunction]
fn aggregate_oracle(vectors: Vec<Vec<f64>>, data_sizes: Vec<u64>) -> PyResult<Vec<f64>> {
    Ok(aggregation::aggregate_oracle(&ParameterSet::new(vectors, data_sizes).py()?))
}

/// One ring round; `failures` is a list of `(step, transmitter)` pairs or
/// `bernoulli=(p, seed)`. Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (vectors, data_sizes, ring, failures = None, bernoulli = None, placement = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn run_round<'py>(
    py: Python<'py>,
    vectors: Vec<Vec<f64>>,
    data_sizes: Vec<u64>,
    ring: &PyRing,
    failures: Option<Vec<(usize, usize)>>,
    bernoulli: Option<(f64, u64)>,
    placement: Option<PyPlacement>,
    config: Option<PyScenarioConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let params = ParameterSet::new(vectors, data_sizes).py()?;
    let schedule = match (failures, bernoulli) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give either failures or bernoulli, not both")),
        (Some(events), None) => FailureSchedule::Events(events),
        (None, Some((p, seed))) => FailureSchedule::Bernoulli { p, seed },
        (None, None) => FailureSchedule::none(),
    };
    let config = config.map(|c| c.inner).unwrap_or_default();
    let radio = placement.as_ref().map(|p| (&p.inner, &config));
    let report = aggregation::run_round(&params, &ring.inner, &schedule, radio).py()?;
    let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_python(py, &text)
}

/// Runs a sweep given as the JSON `sweep` object; returns `{"records": [...], "summary": [...]}`.
#[pyfunction]
#[pyo3(signature = (spec_json, config = None, params = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    spec_json: &str,
    config: Option<PyScenarioConfig>,
    params: Option<PyAcoParams>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: SweepSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let config = config.map(|c| c.inner).unwrap_or_default();
    let params = params.map(|p| p.inner).unwrap_or_default();
    let result = py.detach(|| experiments::run_sweep(&spec, &config, &params)).py()?;
    let text = serde_json::to_string(&result).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_python(py, &text)
}

#[pyfunction]
fn fit_loglog_slope(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    experiments::fit_loglog_slope(&xs, &ys).py()
}

#[pymodule]
fn ringfl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("InfeasibleLinkError", m.py().get_type::<InfeasibleLinkError>())?;
    m.add("AggregationError", m.py().get_type::<AggregationError>())?;
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<PyPlacement>()?;
    m.add_class::<PyRing>()?;
    m.add_class::<PyAcoParams>()?;
    m.add_class::<PyAcoOutcome>()?;
    m.add_class::<PyRoundTiming>()?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(validate_ring, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_ring, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_ring, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_ring, m)?)?;
    m.add_function(wrap_pyfunction!(t_star, m)?)?;
    m.add_function(wrap_pyfunction!(t_scatter_reduce, m)?)?;
    m.add_function(wrap_pyfunction!(t_mrar, m)?)?;
    m.add_function(wrap_pyfunction!(expected_t_star, m)?)?;
    m.add_function(wrap_pyfunction!(expected_t_sr_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(expected_t_ag, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_round, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog_slope, m)?)?;
    Ok(())
}
