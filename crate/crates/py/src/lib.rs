//! Python bindings: networks, plant models, the OCP solver and the
//! experiment runners.

use std::path::PathBuf;

use adaptive_nmpc::dynamics::{eval_nominal, eval_true, rk4_step, AugmentedModel, PlantKind, PlantModel, PlantSpec};
use adaptive_nmpc::experiments::{aggregate as aggregate_dir, run_experiment as run, run_meta_train, ExperimentConfig};
use adaptive_nmpc::nmpc::{solve_ocp as solve, OcpConfig};
use adaptive_nmpc::numcore::{Activation, DenseMatrix, FlatParams, LabeledBatch, Loss, MlpModel};
use adaptive_nmpc::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Json(_) | Error::Shape(_) | Error::Argument(_) => PyValueError::new_err(msg),
        Error::Numeric(_) | Error::Solver { .. } | Error::Training { .. } => PyArithmeticError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn parse_activation(name: &str) -> PyResult<Activation> {
    match name {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
    }
}

fn parse_loss(name: &str) -> PyResult<Loss> {
    match name {
        "mse" => Ok(Loss::Mse),
        "mae" => Ok(Loss::Mae),
        other => Err(PyValueError::new_err(format!("unknown loss {other:?}"))),
    }
}

fn parse_kind(name: &str) -> PyResult<PlantKind> {
    match name {
        "van_der_pol" => Ok(PlantKind::VanDerPol),
        "cart_pole" => Ok(PlantKind::CartPole),
        "quad_2d" => Ok(PlantKind::Quad2d),
        other => Err(PyValueError::new_err(format!("unknown plant {other:?}"))),
    }
}

fn batch(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<LabeledBatch> {
    let x = DenseMatrix::from_rows(&inputs).map_err(to_py)?;
    let y = DenseMatrix::from_rows(&targets).map_err(to_py)?;
    LabeledBatch::new(x, y).map_err(to_py)
}

/// Feed-forward network with tanh or relu hidden layers and a linear output.
#[pyclass(name = "Mlp", module = "adaptive_nmpc_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMlp {
    inner: MlpModel,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (layer_sizes, activation = "tanh", seed = 0))]
    fn new(layer_sizes: Vec<usize>, activation: &str, seed: u64) -> PyResult<Self> {
        let inner = MlpModel::init(&layer_sizes, parse_activation(activation)?, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: MlpModel::load_json(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_json(&path).map_err(to_py)
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params().0.clone()
    }

    fn with_params(&self, params: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_params(FlatParams(params)).map_err(to_py)?,
        })
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(to_py)
    }

    fn input_jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.input_jacobian(&x).map_err(to_py)?.to_rows())
    }

    #[pyo3(signature = (inputs, targets, loss = "mse"))]
    fn loss(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, loss: &str) -> PyResult<f64> {
        self.inner.loss(&batch(inputs, targets)?, parse_loss(loss)?).map_err(to_py)
    }

    /// Returns `(loss, gradient)` with the gradient in flat parameter order.
    #[pyo3(signature = (inputs, targets, loss = "mse"))]
    fn gradient(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, loss: &str) -> PyResult<(f64, Vec<f64>)> {
        let (l, g) = self
            .inner
            .loss_and_gradient(&batch(inputs, targets)?, parse_loss(loss)?)
            .map_err(to_py)?;
        Ok((l, g.0))
    }

    fn __repr__(&self) -> String {
        format!("Mlp({:?}, {} parameters)", self.inner.layer_sizes(), self.inner.param_count())
    }
}

/// A plant with its true and nominal parameters and input bounds.
#[pyclass(name = "Plant", module = "adaptive_nmpc_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPlant {
    inner: PlantSpec,
}

#[pymethods]
impl PyPlant {
    /// `kind` is one of `van_der_pol`, `cart_pole`, `quad_2d`.
    #[new]
    fn new(kind: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PlantSpec::default_for(parse_kind(kind)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PlantSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    /// The same plant with the true parameters replaced by the nominal ones.
    fn matched(&self) -> Self {
        Self {
            inner: self.inner.matched(),
        }
    }

    fn eval_true(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        eval_true(&self.inner, &x, &u).map_err(to_py)
    }

    fn eval_nominal(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        eval_nominal(&self.inner, &x, &u).map_err(to_py)
    }

    /// One RK4 step of the true (default) or nominal dynamics.
    #[pyo3(signature = (x, u, dt, nominal = false))]
    fn rk4_step(&self, x: Vec<f64>, u: Vec<f64>, dt: f64, nominal: bool) -> PyResult<Vec<f64>> {
        let params = if nominal { self.inner.nominal_params } else { self.inner.true_params };
        rk4_step(&PlantModel { params }, &x, &u, dt).map_err(to_py)
    }
}

/// Solves the tracking OCP for a constant reference on the nominal model,
/// optionally augmented with `residual`.
#[pyfunction]
#[pyo3(signature = (plant, x0, x_ref, u_ref, q, r, horizon = 1.0, steps = 20, residual = None))]
#[allow(clippy::too_many_arguments)]
fn solve_ocp<'py>(
    py: Python<'py>,
    plant: PyRef<'py, PyPlant>,
    x0: Vec<f64>,
    x_ref: Vec<f64>,
    u_ref: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    horizon: f64,
    steps: usize,
    residual: Option<PyRef<'py, PyMlp>>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = &plant.inner;
    let mut cfg = OcpConfig::new(q, r, spec.input_bounds.clone());
    cfg.horizon = horizon;
    cfg.steps = steps;
    let model = match residual {
        Some(n) => AugmentedModel::with_residual(spec.nominal_params, n.inner.clone()).map_err(to_py)?,
        None => AugmentedModel::from_spec(spec),
    };
    let refs: Vec<(Vec<f64>, Vec<f64>)> = vec![(x_ref, u_ref); steps + 1];
    let sol = solve(&model, &x0, &refs, &cfg, None).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("controls", sol.controls)?;
    out.set_item("states", sol.states)?;
    out.set_item("cost", sol.cost)?;
    out.set_item("iters", sol.iters)?;
    out.set_item("converged", sol.converged)?;
    Ok(out)
}

fn load_config(path: PathBuf, trials: Option<usize>, seed: Option<u64>, paper_scale: bool) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&path).map_err(to_py)?;
    cfg.apply_overrides(paper_scale, trials, seed);
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Runs the experiment of a config file and returns its summary as JSON
/// (`None` for meta-training configs).
#[pyfunction]
#[pyo3(signature = (config, trials = None, seed = None, paper_scale = false))]
fn run_experiment(config: PathBuf, trials: Option<usize>, seed: Option<u64>, paper_scale: bool) -> PyResult<Option<String>> {
    let cfg = load_config(config, trials, seed, paper_scale)?;
    match run(&cfg).map_err(to_py)? {
        Some(s) => Ok(Some(
            serde_json::to_string(&s).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        )),
        None => Ok(None),
    }
}

/// Meta-trains the network of a config file; returns the checkpoint path.
#[pyfunction]
#[pyo3(signature = (config, seed = None, paper_scale = false))]
fn meta_train(config: PathBuf, seed: Option<u64>, paper_scale: bool) -> PyResult<PathBuf> {
    let cfg = load_config(config, None, seed, paper_scale)?;
    run_meta_train(&cfg).map_err(to_py)
}

/// Recomputes `summary.json` of a run directory and returns it.
#[pyfunction]
fn aggregate(dir: PathBuf) -> PyResult<String> {
    let s = aggregate_dir(&dir).map_err(to_py)?;
    serde_json::to_string(&s).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn adaptive_nmpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_class::<PyPlant>()?;
    m.add_function(wrap_pyfunction!(solve_ocp, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(meta_train, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    Ok(())
}
