//! Python bindings. Reports come back as plain dicts and lists; counts and
//! draws are wrapped in small classes.

use btme::data::{ComparisonArray, DeviationTable};
use btme::model::{ModelConfig, ModelParams, WeightProposal};
use btme::pipeline::{comparisons_to_csv, parse_comparisons_csv, rank_csv};
use btme::posterior::PosteriorSummary;
use btme::sampler::PosteriorDraws;
use btme::simulation::{run_reconstruction_study, Scenario, StudyConfig};
use btme::BtmeError;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: BtmeError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<T: serde::Serialize + ?Sized>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Pairwise win counts `y[j][r][s]` with per-treatment sample sizes.
#[pyclass(name = "Comparisons", module = "btme", skip_from_py_object)]
#[derive(Clone)]
struct PyComparisons {
    inner: ComparisonArray,
    treatments: Vec<String>,
    features: Vec<String>,
}

impl PyComparisons {
    fn wrap(inner: ComparisonArray) -> Self {
        let treatments = (1..=inner.num_treatments()).map(|i| format!("T{i}")).collect();
        let features = (1..=inner.num_features()).map(|j| format!("f{j}")).collect();
        Self {
            inner,
            treatments,
            features,
        }
    }
}

#[pymethods]
impl PyComparisons {
    #[new]
    fn new(counts: Vec<Vec<Vec<u64>>>, sample_sizes: Vec<usize>) -> PyResult<Self> {
        Ok(Self::wrap(
            ComparisonArray::from_nested(&counts, sample_sizes).map_err(err)?,
        ))
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let (inner, treatments, features) = parse_comparisons_csv(text).map_err(err)?;
        Ok(Self {
            inner,
            treatments,
            features,
        })
    }

    fn to_csv(&self) -> String {
        comparisons_to_csv(&self.inner, &self.treatments, &self.features)
    }

    #[getter]
    fn num_treatments(&self) -> usize {
        self.inner.num_treatments()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn sample_sizes(&self) -> Vec<usize> {
        self.inner.sample_sizes().to_vec()
    }

    #[getter]
    fn treatments(&self) -> Vec<String> {
        self.treatments.clone()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.features.clone()
    }

    fn get(&self, j: usize, r: usize, s: usize) -> PyResult<u64> {
        self.check(j, r, s)?;
        Ok(self.inner.get(j, r, s))
    }

    fn ties(&self, j: usize, r: usize, s: usize) -> PyResult<u64> {
        self.check(j, r, s)?;
        Ok(self.inner.ties(j, r, s))
    }

    fn to_nested(&self) -> Vec<Vec<Vec<u64>>> {
        self.inner.to_nested()
    }

    fn __repr__(&self) -> String {
        format!(
            "Comparisons(K={}, M={})",
            self.inner.num_treatments(),
            self.inner.num_features()
        )
    }
}

impl PyComparisons {
    fn check(&self, j: usize, r: usize, s: usize) -> PyResult<()> {
        let k = self.inner.num_treatments();
        if j >= self.inner.num_features() || r >= k || s >= k {
            return Err(PyValueError::new_err(format!("index ({j}, {r}, {s}) out of range")));
        }
        Ok(())
    }
}

/// Draws of one chain.
#[pyclass(name = "Draws", module = "btme")]
struct PyDraws {
    inner: PosteriorDraws,
}

#[pymethods]
impl PyDraws {
    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    /// `S x K` global indexes.
    #[getter]
    fn d(&self) -> Vec<Vec<f64>> {
        self.inner
            .d_draws
            .chunks(self.inner.num_treatments)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// `S x K x M` weights.
    #[getter]
    fn w(&self) -> Vec<Vec<Vec<f64>>> {
        let m = self.inner.num_features;
        (0..self.inner.num_samples())
            .map(|i| self.inner.w(i).chunks(m).map(<[f64]>::to_vec).collect())
            .collect()
    }

    #[getter]
    fn log_lik(&self) -> Vec<f64> {
        self.inner.log_lik_trace.clone()
    }

    #[getter]
    fn accept_rate_d(&self) -> Vec<f64> {
        self.inner.accept_rate_d.clone()
    }

    #[getter]
    fn accept_rate_w(&self) -> Option<Vec<f64>> {
        self.inner.accept_rate_w.clone()
    }

    #[pyo3(signature = (burn_in = 0, thin = 1))]
    fn slice(&self, burn_in: usize, thin: usize) -> Self {
        Self {
            inner: self.inner.slice(burn_in, thin),
        }
    }

    /// Point estimates, prevailing matrices and ranking distribution.
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &PosteriorSummary::from_draws(&self.inner))
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

/// Full pipeline from CSV and TOML text; returns `{"summary": ..., "ties": ...}`.
#[pyfunction]
fn rank(py: Python<'_>, data_csv: &str, config_toml: &str) -> PyResult<Py<PyAny>> {
    let out = py.detach(|| rank_csv(data_csv, config_toml)).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("summary", json_to_py(py, &out.summary)?)?;
    dict.set_item("ties", json_to_py(py, &out.ties)?)?;
    Ok(dict.into_any().unbind())
}

/// Counts strict wins between every pair of treatments, per feature.
/// `deviations[k][i][j]` is individual `i` of treatment `k` on feature `j`.
#[pyfunction]
fn count_comparisons(deviations: Vec<Vec<Vec<f64>>>) -> PyResult<PyComparisons> {
    let m = deviations.first().and_then(|t| t.first()).map_or(0, Vec::len);
    if deviations.iter().flatten().any(|row| row.len() != m) {
        return Err(PyValueError::new_err(
            "every individual needs the same number of features",
        ));
    }
    Ok(PyComparisons::wrap(btme::count_comparisons(&DeviationTable {
        values: deviations,
    })))
}

#[pyfunction]
#[pyo3(signature = (y, d, w, importances = None))]
fn log_likelihood(y: &PyComparisons, d: Vec<f64>, w: Vec<Vec<f64>>, importances: Option<Vec<f64>>) -> PyResult<f64> {
    let m = y.inner.num_features();
    if w.len() != d.len() || w.iter().any(|row| row.len() != m) {
        return Err(PyValueError::new_err(format!(
            "w must be {} rows of {m} weights",
            d.len()
        )));
    }
    let mut cfg = ModelConfig::new(m);
    if let Some(i) = importances {
        cfg.importances = i;
    }
    btme::model::log_likelihood(&y.inner, &ModelParams::from_rows(d, &w), &cfg).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (
    y, samples = btme::model::DEFAULT_SAMPLES, seed = 0, u = btme::model::DEFAULT_U,
    proposal_sd = btme::model::DEFAULT_PROPOSAL_SD, alphas = None, importances = None,
    weight_proposal = "prior", stream = 0
))]
#[allow(clippy::too_many_arguments)]
fn run_chain(
    py: Python<'_>,
    y: &PyComparisons,
    samples: usize,
    seed: u64,
    u: f64,
    proposal_sd: f64,
    alphas: Option<Vec<f64>>,
    importances: Option<Vec<f64>>,
    weight_proposal: &str,
    stream: u64,
) -> PyResult<PyDraws> {
    let mut cfg = ModelConfig::new(y.inner.num_features());
    cfg.samples = samples;
    cfg.seed = seed;
    cfg.u = u;
    cfg.proposal_sd = proposal_sd;
    cfg.stream = stream;
    if let Some(a) = alphas {
        cfg.alphas = a;
    }
    if let Some(i) = importances {
        cfg.importances = i;
    }
    cfg.weight_proposal = match weight_proposal {
        "prior" => WeightProposal::Prior,
        "local" => WeightProposal::Local,
        other => {
            return Err(PyValueError::new_err(format!(
                "weight_proposal must be 'prior' or 'local', got '{other}'"
            )))
        }
    };
    let y = y.inner.clone();
    let inner = py.detach(|| btme::run_chain(&y, &cfg)).map_err(err)?;
    Ok(PyDraws { inner })
}

/// Draws `(d, w)` from the prior and comparison counts from the model.
/// Returns `(Comparisons, truth)` with `truth = {"d": [...], "w": [[...]]}`.
#[pyfunction]
#[pyo3(signature = (k, m, n = 10, seed = 0, u = btme::model::DEFAULT_U, alpha = 1.0))]
fn simulate(
    py: Python<'_>,
    k: usize,
    m: usize,
    n: usize,
    seed: u64,
    u: f64,
    alpha: f64,
) -> PyResult<(PyComparisons, Py<PyAny>)> {
    let mut cfg = ModelConfig::new(m.max(1));
    cfg.u = u;
    cfg.alphas = vec![alpha; m];
    cfg.importances = vec![1.0; m];
    let sim = btme::simulation::simulate_generative(&vec![n; k], &cfg, seed).map_err(err)?;
    let truth = pyo3::types::PyDict::new(py);
    truth.set_item("d", btme::simulation::identified(&sim.params.d))?;
    truth.set_item("w", sim.params.w_rows())?;
    Ok((PyComparisons::wrap(sim.y), truth.into_any().unbind()))
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    btme::posterior::spearman(&a, &b).map_err(err)
}

/// Simulation-recovery study over `grid = [(K, M), ...]`; returns the study report.
#[pyfunction]
#[pyo3(signature = (grid, replicates = 20, samples = 200_000, seed = 0, n = 10))]
fn run_study(
    py: Python<'_>,
    grid: Vec<(usize, usize)>,
    replicates: usize,
    samples: usize,
    seed: u64,
    n: usize,
) -> PyResult<Py<PyAny>> {
    let study = StudyConfig {
        grid: grid.into_iter().map(|(k, m)| Scenario { k, m }).collect(),
        replicates,
        samples,
        seed,
        units_per_treatment: n,
        ..StudyConfig::default()
    };
    let report = py.detach(|| run_reconstruction_study(&study)).map_err(err)?;
    json_to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "btme")]
fn btme_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyComparisons>()?;
    m.add_class::<PyDraws>()?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(count_comparisons, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add("CONFIG_KEYS_HELP", btme::pipeline::CONFIG_KEYS_HELP)?;
    Ok(())
}
