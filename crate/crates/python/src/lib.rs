//! Python bindings: architectures, compressed spaces, fitness functions and
//! the evolutionary search.

use std::sync::Arc;

use chanprune::benchmark;
use chanprune::fitness::{sphere_fitness, surrogate_fitness};
use chanprune::ide::{self, IdeConfig, Mode};
use chanprune::{
    ArchitectureSpec, CompressedSpace, EvalError, Evaluator, EvaluatorDescriptor, FitnessValue,
    SparsityTargets, SphereEvaluator, StepVector, StructureVector, SurrogateEvaluator,
};
use num_bigint::BigUint;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: chanprune::Error) -> PyErr {
    match e {
        chanprune::Error::Eval(_) | chanprune::Error::Io(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn eval_err(e: EvalError) -> PyErr {
    err(e.into())
}

fn sv(v: Vec<i64>) -> StructureVector {
    StructureVector(v)
}

/// A network description with its prunable widths.
#[pyclass(name = "Architecture", module = "chanprune", frozen)]
pub struct PyArchitecture {
    inner: Arc<ArchitectureSpec>,
}

#[pymethods]
impl PyArchitecture {
    /// Loads a bundled architecture by name, or a JSON file by path.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ArchitectureSpec::load(name_or_path).map_err(err)?),
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ArchitectureSpec::parse(text).map_err(err)?),
        })
    }

    #[staticmethod]
    fn bundled() -> Vec<&'static str> {
        chanprune::arch::BUNDLED.to_vec()
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn base_structure(&self) -> Vec<i64> {
        self.inner.base_structure().0.clone()
    }

    #[getter]
    fn variable_names(&self) -> Vec<String> {
        self.inner.variable_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.num_variables()
    }

    /// `(flops, params)` of the unpruned network.
    fn base_cost(&self) -> (u64, u64) {
        let c = self.inner.base_cost();
        (c.flops, c.params)
    }

    /// `(flops, params)` of the network pruned to `structure`.
    fn cost(&self, structure: Vec<i64>) -> PyResult<(u64, u64)> {
        let c = self.inner.compute_cost(&sv(structure)).map_err(err)?;
        Ok((c.flops, c.params))
    }

    /// `(r_f, r_p)` pruning rates relative to the base network.
    fn rates(&self, structure: Vec<i64>) -> PyResult<(f64, f64)> {
        self.inner.pruning_rates(&sv(structure)).map_err(err)
    }

    #[pyo3(signature = (structure, rf=0.0, rp=0.0))]
    fn is_feasible(&self, structure: Vec<i64>, rf: f64, rp: f64) -> PyResult<bool> {
        let t = SparsityTargets::new(rf, rp).map_err(err)?;
        self.inner.is_feasible(&sv(structure), &t).map_err(err)
    }

    fn flops_shares(&self) -> Vec<f64> {
        self.inner.flops_shares()
    }

    fn __repr__(&self) -> String {
        format!(
            "Architecture({:?}, variables={})",
            self.inner.name(),
            self.inner.num_variables()
        )
    }
}

/// Step-compressed integer search space, optionally tied to sparsity targets.
#[pyclass(name = "Space", module = "chanprune", frozen)]
pub struct PySpace {
    inner: Arc<CompressedSpace>,
    arch: Option<Arc<ArchitectureSpec>>,
}

#[derive(FromPyObject)]
enum Steps {
    Uniform(i64),
    Explicit(Vec<i64>),
}

#[pymethods]
impl PySpace {
    /// `steps` is `None` (one eighth of each width), an int applied to every
    /// variable, or one step per variable.
    #[new]
    #[pyo3(signature = (arch, rf=0.0, rp=0.0, steps=None))]
    fn new(arch: &PyArchitecture, rf: f64, rp: f64, steps: Option<Steps>) -> PyResult<Self> {
        let spec = arch.inner.clone();
        let base = spec.base_structure();
        let steps = match steps {
            None => StepVector::eighth(base),
            Some(Steps::Uniform(k)) => StepVector::uniform(k, base).map_err(err)?,
            Some(Steps::Explicit(v)) => StepVector::new(v, base).map_err(err)?,
        };
        let targets = SparsityTargets::new(rf, rp).map_err(err)?;
        let space =
            CompressedSpace::for_architecture(spec.clone(), &steps, targets).map_err(err)?;
        Ok(Self {
            inner: Arc::new(space),
            arch: Some(spec),
        })
    }

    /// The unconstrained integer box of the sphere benchmark.
    #[staticmethod]
    #[pyo3(signature = (dims=30))]
    fn sphere(dims: usize) -> Self {
        Self {
            inner: Arc::new(SphereEvaluator::with_dims(dims).space()),
            arch: None,
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Exact number of admissible vectors, as a Python int.
    #[getter]
    fn size(&self) -> BigUint {
        self.inner.size()
    }

    #[getter]
    fn minimum(&self) -> Vec<i64> {
        self.inner.minimum().0
    }

    #[getter]
    fn maximum(&self) -> Vec<i64> {
        self.inner.maximum().0
    }

    #[getter]
    fn targets(&self) -> Option<(f64, f64)> {
        self.inner
            .constraint()
            .map(|c| (c.targets.flops, c.targets.params))
    }

    fn contains(&self, v: Vec<i64>) -> bool {
        self.inner.contains(&sv(v))
    }

    fn is_feasible(&self, v: Vec<i64>) -> PyResult<bool> {
        self.inner.is_feasible(&sv(v)).map_err(err)
    }

    #[pyo3(signature = (seed=0))]
    fn sample(&self, seed: u64) -> Vec<i64> {
        self.inner
            .sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed))
            .0
    }

    fn snap(&self, v: Vec<i64>) -> PyResult<Vec<i64>> {
        Ok(self.inner.snap_and_clamp(&sv(v)).map_err(err)?.0)
    }

    /// Snap, clamp and shrink until the targets hold; raises `ValueError`
    /// when even the all-minimum structure misses them.
    #[pyo3(signature = (v, seed=0))]
    fn rescale(&self, v: Vec<i64>, seed: u64) -> PyResult<Vec<i64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.inner.rescale(&sv(v), &mut rng).map_err(err)?.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "Space(dim={}, size={})",
            self.inner.dim(),
            self.inner.size()
        )
    }
}

#[pyfunction]
fn sphere(x: Vec<i64>) -> PyResult<f64> {
    let dims = x.len();
    Ok(sphere_fitness(&sv(x), dims).map_err(eval_err)?.value())
}

#[pyfunction]
fn surrogate(arch: &PyArchitecture, structure: Vec<i64>) -> PyResult<f64> {
    let shares = arch.inner.flops_shares();
    let f = surrogate_fitness(&arch.inner, &shares, &sv(structure)).map_err(eval_err)?;
    Ok(f.value())
}

/// Calls back into a Python function for every score.
struct PyCallable {
    func: Py<PyAny>,
    descriptor: EvaluatorDescriptor,
}

impl Evaluator for PyCallable {
    fn descriptor(&self) -> &EvaluatorDescriptor {
        &self.descriptor
    }

    fn evaluate(&mut self, s: &StructureVector) -> Result<FitnessValue, EvalError> {
        let value = Python::attach(|py| {
            self.func
                .call1(py, (s.0.clone(),))
                .and_then(|v| v.extract::<f64>(py))
                .map_err(|e| EvalError::Rejected(e.to_string()))
        })?;
        FitnessValue::new(value)
    }
}

fn config(
    iterations: usize,
    population: usize,
    f: f64,
    cr: f64,
    stagnation: u32,
    seed: u64,
    mode: &str,
) -> PyResult<IdeConfig> {
    Ok(IdeConfig {
        population_size: population,
        iterations,
        differential_weight: f,
        crossover_prob: cr,
        stagnation_limit: stagnation,
        seed,
        mode: mode.parse::<Mode>().map_err(err)?,
        force_mutant_gene: false,
    })
}

/// Runs the search. `evaluator` is `"surrogate"` (the default), `"sphere"`,
/// or a callable taking a list of ints and returning a float.
#[pyfunction]
#[pyo3(signature = (space, evaluator=None, iterations=100, population=10, f=0.5, cr=0.8, stagnation=4, seed=0, mode="ide"))]
#[allow(clippy::too_many_arguments)]
fn run_search<'py>(
    py: Python<'py>,
    space: &PySpace,
    evaluator: Option<Py<PyAny>>,
    iterations: usize,
    population: usize,
    f: f64,
    cr: f64,
    stagnation: u32,
    seed: u64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(iterations, population, f, cr, stagnation, seed, mode)?;
    let evaluator = match evaluator {
        Some(e) => e,
        None => "surrogate".into_pyobject(py)?.into_any().unbind(),
    };
    let mut eval: Box<dyn Evaluator + Send> = match evaluator.extract::<String>(py) {
        Ok(name) if name == "surrogate" => {
            let spec = space
                .arch
                .clone()
                .ok_or_else(|| PyValueError::new_err("surrogate needs an architecture space"))?;
            Box::new(SurrogateEvaluator::new(spec))
        }
        Ok(name) if name == "sphere" => Box::new(SphereEvaluator::with_dims(space.inner.dim())),
        Ok(name) => return Err(PyValueError::new_err(format!("unknown evaluator `{name}`"))),
        Err(_) => Box::new(PyCallable {
            func: evaluator,
            descriptor: EvaluatorDescriptor {
                name: "python".into(),
                deterministic: false,
                concurrent_safe: false,
                expected_vector_length: space.inner.dim(),
                value_range: (f64::MIN, f64::MAX),
            },
        }),
    };
    let inner = space.inner.clone();
    let out = py
        .detach(move || ide::run(&inner, &mut eval, &cfg))
        .map_err(|a| err(a.error))?;

    let d = PyDict::new(py);
    d.set_item("best", out.best.vector.0.clone())?;
    d.set_item("fitness", out.best.fitness.map(|f| f.value()))?;
    if let Some(spec) = &space.arch {
        d.set_item("rates", spec.pruning_rates(&out.best.vector).map_err(err)?)?;
    }
    let history: Vec<(usize, f64, u64, u64)> = out
        .history
        .records
        .iter()
        .map(|r| {
            (
                r.generation,
                r.best_fitness.value(),
                r.evaluations,
                r.reinitializations,
            )
        })
        .collect();
    d.set_item("history", history)?;
    let population: Vec<(Vec<i64>, Option<f64>)> = out
        .final_population
        .individuals
        .iter()
        .map(|i| (i.vector.0.clone(), i.fitness.map(|f| f.value())))
        .collect();
    d.set_item("population", population)?;
    Ok(d)
}

/// Seed sweep on the sphere benchmark; one summary dict per mode.
#[pyfunction]
#[pyo3(signature = (seeds=(0..10).collect(), iterations=1000, modes=vec!["ide".to_string(), "de".to_string()]))]
fn run_benchmark<'py>(
    py: Python<'py>,
    seeds: Vec<u64>,
    iterations: usize,
    modes: Vec<String>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let base = IdeConfig {
        iterations,
        ..Default::default()
    };
    let mut out = Vec::new();
    for m in modes {
        let mode: Mode = m.parse().map_err(err)?;
        let s = py
            .detach(|| benchmark::run_mode(mode, &seeds, &base))
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("mode", s.mode.to_string())?;
        d.set_item("seeds", s.seeds)?;
        d.set_item("successes", s.successes)?;
        d.set_item("median_first_hit", s.median_first_hit)?;
        d.set_item("mean_best_fitness", s.mean_best_fitness)?;
        d.set_item(
            "first_hits",
            s.runs.iter().map(|r| r.first_hit).collect::<Vec<_>>(),
        )?;
        out.push(d);
    }
    Ok(out)
}

#[pymodule]
#[pyo3(name = "chanprune")]
pub fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PySpace>()?;
    m.add_function(wrap_pyfunction!(sphere, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
