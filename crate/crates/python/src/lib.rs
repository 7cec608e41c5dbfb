//! Python module `sobol_robust`: marginal densities, studies driven by JSON
//! configs, and nominal indices from user-supplied evaluations.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sobol_robust::estimators::estimate_with_bootstrap;
use sobol_robust::perturb::DEFAULT_TAU;
use sobol_robust::study::{self, LoadedConfig, RunOptions};
use sobol_robust::{Error, EvalBundle, MarginalDensity, PickFreezeDesign, SobolEstimates};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Marginal { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn estimates_dict<'py>(py: Python<'py>, est: &SobolEstimates) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("S", est.s.clone())?;
    d.set_item("T", est.t.clone())?;
    d.set_item("stdS", est.std_s.clone())?;
    d.set_item("stdT", est.std_t.clone())?;
    d.set_item("varF", est.var_f)?;
    d.set_item("N", est.n)?;
    Ok(d)
}

/// One input's nominal density. Methods work in unit coordinates; use
/// `to_physical` to map back.
#[pyclass(name = "Marginal", module = "sobol_robust", frozen)]
struct PyMarginal {
    inner: MarginalDensity,
}

#[pymethods]
impl PyMarginal {
    #[staticmethod]
    fn uniform(lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalDensity::uniform(lo, hi).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalDensity::truncated_normal(mu, sigma, lo, hi).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn randomized_support_uniform(lo_interval: (f64, f64), hi_interval: (f64, f64)) -> PyResult<Self> {
        let inner =
            MarginalDensity::randomized_support_uniform([lo_interval.0, lo_interval.1], [hi_interval.0, hi_interval.1])
                .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn tabulated(x: Vec<f64>, density: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalDensity::tabulated(x, density).map_err(py_err)?,
        })
    }

    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    fn pdf(&self, x: f64) -> PyResult<f64> {
        self.inner.pdf(x).map_err(py_err)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.inner.cdf(x)
    }

    fn quantile(&self, q: f64) -> PyResult<f64> {
        self.inner.quantile(q).map_err(py_err)
    }

    fn cell_infimum(&self, a: f64, b: f64) -> f64 {
        self.inner.cell_infimum(a, b)
    }

    fn to_physical(&self, x: f64) -> f64 {
        self.inner.to_physical(x)
    }

    /// `n` draws in unit coordinates from a seeded stream.
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = sobol_robust::design::substream(seed, 0);
        self.inner.sample(n, &mut rng)
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.inner.support();
        format!("Marginal({:?} on [{lo}, {hi}])", self.inner.spec())
    }
}

/// A study loaded from a JSON config file.
#[pyclass(name = "Study", module = "sobol_robust", frozen)]
struct PyStudy {
    loaded: LoadedConfig,
}

#[pymethods]
impl PyStudy {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            loaded: LoadedConfig::from_file(&path).map_err(py_err)?,
        })
    }

    /// Config given as a JSON string; relative paths resolve against
    /// `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir = None))]
    fn from_json(text: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            loaded: LoadedConfig::from_str(text, "<string>", base).map_err(py_err)?,
        })
    }

    #[getter]
    fn names(&self) -> PyResult<Vec<String>> {
        Ok(self.loaded.prepare().map_err(py_err)?.names)
    }

    /// Nominal indices only. Evaluates the model.
    fn indices<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let loaded = self.loaded.clone();
        let est = py
            .detach(move || {
                let study = loaded.prepare()?;
                let bundle = study.evaluate()?;
                study.indices(&bundle)
            })
            .map_err(py_err)?;
        estimates_dict(py, &est)
    }

    /// Full pipeline; writes every output file and returns a summary.
    #[pyo3(signature = (out = None, seed = None, reuse_bundle = false))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        reuse_bundle: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let loaded = self.loaded.clone();
        let opts = RunOptions {
            out,
            seed,
            reuse_bundle,
        };
        let outcome = py.detach(move || study::run_study(&loaded, &opts)).map_err(py_err)?;
        let d = estimates_dict(py, &outcome.analysis.estimates)?;
        let rep = &outcome.analysis.report;
        d.set_item("envelope_min_T", rep.envelope_min_t.clone())?;
        d.set_item("envelope_max_T", rep.envelope_max_t.clone())?;
        d.set_item("envelope_min_S", rep.envelope_min_s.clone())?;
        d.set_item("envelope_max_S", rep.envelope_max_s.clone())?;
        d.set_item("out", outcome.out)?;
        d.set_item("model_calls", outcome.model_calls)?;
        Ok(d)
    }
}

/// Runs the study in `config` and returns the same summary as `Study.run`.
#[pyfunction]
#[pyo3(signature = (config, out = None, seed = None, reuse_bundle = false))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    reuse_bundle: bool,
) -> PyResult<Bound<'py, PyDict>> {
    PyStudy::from_file(config)?.run(py, out, seed, reuse_bundle)
}

/// Ranked text summary of a finished run.
#[pyfunction]
#[pyo3(signature = (out, svg = false))]
fn report(out: PathBuf, svg: bool) -> PyResult<String> {
    study::report(&out, svg).map_err(py_err)
}

/// Nominal indices from evaluations made elsewhere. `a` and `b` are the
/// `N x p` design rows in unit coordinates, `f_c[k]` the outputs on `C_k`.
#[pyfunction]
#[pyo3(signature = (a, b, f_a, f_b, f_c, b_rep = 64, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn indices_from_evaluations<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    f_a: Vec<f64>,
    f_b: Vec<f64>,
    f_c: Vec<Vec<f64>>,
    b_rep: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let design = PickFreezeDesign::from_rows(a, b, seed).map_err(py_err)?;
    let bundle = EvalBundle::from_parts(design, f_a, f_b, f_c, "python").map_err(py_err)?;
    let (est, _) = estimate_with_bootstrap(&bundle, b_rep, seed).map_err(py_err)?;
    estimates_dict(py, &est)
}

#[pymodule]
#[pyo3(name = "sobol_robust")]
fn sobol_robust_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarginal>()?;
    m.add_class::<PyStudy>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(indices_from_evaluations, m)?)?;
    m.add("DEFAULT_TAU", DEFAULT_TAU)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
