//! Python bindings for the `dpk2st` crate.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dpk2st::features::{self, Dataset, FeatureMatrix, Variant};
use dpk2st::pipelines::{self, LocationPolicy, Setting, TestConfig};
use dpk2st::privacy::{self, PrivacyBudget};
use dpk2st::rng::rng_from_seed;
use dpk2st::{nulls, statistic, synthgen};

type Rows = Vec<Vec<f64>>;

fn py_err(e: dpk2st::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dataset(rows: Vec<Vec<f64>>, label: &str) -> PyResult<Dataset> {
    Dataset::new(rows, label).map_err(py_err)
}

fn rows_of(x: &Dataset) -> Vec<Vec<f64>> {
    x.rows().map(<[f64]>::to_vec).collect()
}

fn square(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn budget(eps: f64, delta: f64) -> PyResult<PrivacyBudget> {
    PrivacyBudget::new(eps, delta).map_err(py_err)
}

/// Result of a single two-sample test.
#[pyclass(name = "TestOutcome", frozen)]
struct PyTestOutcome {
    #[pyo3(get)]
    setting: String,
    #[pyo3(get)]
    statistic: f64,
    #[pyo3(get)]
    threshold: f64,
    #[pyo3(get)]
    p_value: f64,
    #[pyo3(get)]
    reject: bool,
    #[pyo3(get)]
    null_kind: String,
    #[pyo3(get)]
    sigma_mean: f64,
    #[pyo3(get)]
    beta_cov: f64,
    #[pyo3(get)]
    sigma_stat: f64,
    #[pyo3(get)]
    bandwidth: f64,
    #[pyo3(get)]
    locations: Vec<Vec<f64>>,
    #[pyo3(get)]
    n_test: usize,
    #[pyo3(get)]
    seed: u64,
}

#[pymethods]
impl PyTestOutcome {
    fn __repr__(&self) -> String {
        format!(
            "TestOutcome(setting={:?}, statistic={}, threshold={}, p_value={}, reject={})",
            self.setting, self.statistic, self.threshold, self.p_value, self.reject
        )
    }
}

#[pyfunction]
fn gaussian_kernel(x: Vec<f64>, y: Vec<f64>, bandwidth: f64) -> PyResult<f64> {
    features::gaussian_kernel(&x, &y, bandwidth).map_err(py_err)
}

#[pyfunction]
fn median_heuristic(x: Vec<Vec<f64>>) -> PyResult<f64> {
    features::median_heuristic(&dataset(x, "x")?).map_err(py_err)
}

/// Per-sample features of `x` at `locations` (`variant` is "me" or "scf").
#[pyfunction]
fn features_of(x: Vec<Vec<f64>>, locations: Vec<Vec<f64>>, variant: &str, bandwidth: f64) -> PyResult<Vec<Vec<f64>>> {
    let v: Variant = variant.parse().map_err(py_err)?;
    let loc = features::TestLocations::new(locations, v, bandwidth).map_err(py_err)?;
    let z = features::single_features(&dataset(x, "x")?, &loc).map_err(py_err)?;
    Ok(z.rows().map(<[f64]>::to_vec).collect())
}

/// `n · wᵀ(Σ + γI)⁻¹w` of the given feature rows.
#[pyfunction]
fn statistic_of(z: Vec<Vec<f64>>, gamma: f64) -> PyResult<f64> {
    let z = FeatureMatrix::new(z, features::KAPPA, Variant::Me).map_err(py_err)?;
    statistic::statistic(&statistic::summarize(&z), gamma).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (j, n, kappa = 2.0))]
fn sens_mean(j: usize, n: usize, kappa: f64) -> PyResult<f64> {
    privacy::sens_mean(kappa, j, n).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (j, n, kappa = 2.0))]
fn sens_second_moment(j: usize, n: usize, kappa: f64) -> PyResult<f64> {
    privacy::sens_second_moment(kappa, j, n).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (j, n, gamma, kappa = 2.0))]
fn sens_statistic(j: usize, n: usize, gamma: f64, kappa: f64) -> PyResult<f64> {
    privacy::sens_statistic(kappa, j, n, gamma).map_err(py_err)
}

#[pyfunction]
fn gaussian_sigma_classical(epsilon: f64, delta: f64, sensitivity: f64) -> PyResult<f64> {
    privacy::gaussian_sigma_classical(budget(epsilon, delta)?, sensitivity).map_err(py_err)
}

#[pyfunction]
fn gaussian_sigma_analytic(epsilon: f64, delta: f64, sensitivity: f64) -> PyResult<f64> {
    privacy::gaussian_sigma_analytic(budget(epsilon, delta)?, sensitivity).map_err(py_err)
}

#[pyfunction]
fn compose_total(epsilon: f64, delta: f64, releases: usize, delta_prime: f64) -> PyResult<(f64, f64)> {
    privacy::compose_total(epsilon, delta, releases, delta_prime).map_err(py_err)
}

#[pyfunction]
fn per_release_epsilon(epsilon_total: f64, releases: usize, delta_prime: f64) -> PyResult<f64> {
    privacy::per_release_epsilon(epsilon_total, releases, delta_prime).map_err(py_err)
}

#[pyfunction]
fn chi2_threshold(dof: usize, alpha: f64) -> PyResult<f64> {
    nulls::chi2_threshold(dof, alpha).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (weights, alpha, mc_samples = 100_000, seed = 0))]
fn weighted_chi2_threshold(weights: Vec<f64>, alpha: f64, mc_samples: usize, seed: u64) -> PyResult<f64> {
    nulls::weighted_chi2_threshold(&weights, alpha, mc_samples, seed).map_err(py_err)
}

#[pyfunction]
fn tcmc_null_weights(sigma: Vec<Vec<f64>>, gamma: f64, n: usize, sigma_mean: f64) -> PyResult<Vec<f64>> {
    nulls::tcmc_null_weights(&square(sigma)?, gamma, n, sigma_mean).map_err(py_err)
}

/// Draws `(x, y)` from "sg", "gmd", "gvd" or "blobs".
#[pyfunction]
fn generate(name: &str, n: usize, seed: u64) -> PyResult<(Rows, Rows)> {
    let mut rng = rng_from_seed(seed);
    let (x, y) = match name {
        "sg" => synthgen::gen_sg(n, &mut rng),
        "gmd" => synthgen::gen_gmd(n, &mut rng),
        "gvd" => synthgen::gen_gvd(n, &mut rng),
        "blobs" => synthgen::gen_blobs(n, &synthgen::BlobsParams::default(), &mut rng),
        other => return Err(PyValueError::new_err(format!("unknown dataset `{other}`"))),
    }
    .map_err(py_err)?;
    Ok((rows_of(&x), rows_of(&y)))
}

/// Runs one test. `setting` is "nonprivate", "tcmc", "tcs" or "nte";
/// `locations` is "optimize" or "sample" (defaults per setting when omitted).
#[pyfunction]
#[pyo3(signature = (x, y, setting = "tcmc", variant = "me", epsilon = 2.5, delta = 1e-5, j = 5, alpha = 0.01, seed = 0, locations = None, mc_samples = 100_000))]
#[allow(clippy::too_many_arguments)]
fn run_test(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    setting: &str,
    variant: &str,
    epsilon: f64,
    delta: f64,
    j: usize,
    alpha: f64,
    seed: u64,
    locations: Option<&str>,
    mc_samples: usize,
) -> PyResult<PyTestOutcome> {
    let setting: Setting = setting.parse().map_err(py_err)?;
    let variant: Variant = variant.parse().map_err(py_err)?;
    let mut cfg = TestConfig::new(setting, variant, budget(epsilon, delta)?, seed);
    cfg.n_features = j;
    cfg.alpha = alpha;
    cfg.mc_samples = mc_samples;
    match locations {
        Some("optimize") => cfg.locations = LocationPolicy::Optimize,
        Some("sample") => cfg.locations = LocationPolicy::SampleMedian,
        Some(other) => return Err(PyValueError::new_err(format!("unknown location policy `{other}`"))),
        None => {}
    }
    let o = pipelines::run_test(&dataset(x, "x")?, &dataset(y, "y")?, &cfg).map_err(py_err)?;
    Ok(PyTestOutcome {
        setting: o.setting.name().into(),
        statistic: o.statistic,
        threshold: o.threshold,
        p_value: o.p_value,
        reject: o.reject,
        null_kind: o.null_kind.name().into(),
        sigma_mean: o.noise.sigma_mean,
        beta_cov: o.noise.beta_cov,
        sigma_stat: o.noise.sigma_stat,
        bandwidth: o.locations.bandwidth(),
        locations: o.locations.points().to_vec(),
        n_test: o.n_test,
        seed: o.seed,
    })
}

#[pymodule]
fn dpk2st_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTestOutcome>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(median_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(features_of, m)?)?;
    m.add_function(wrap_pyfunction!(statistic_of, m)?)?;
    m.add_function(wrap_pyfunction!(sens_mean, m)?)?;
    m.add_function(wrap_pyfunction!(sens_second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(sens_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_sigma_classical, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_sigma_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(compose_total, m)?)?;
    m.add_function(wrap_pyfunction!(per_release_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_chi2_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(tcmc_null_weights, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_test, m)?)?;
    Ok(())
}
