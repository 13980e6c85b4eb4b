//! Python bindings. Matrices cross the boundary as nested lists so the
//! module has no numpy dependency.

use std::collections::BTreeMap;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use zidm::distributions::RngStream;
use zidm::inference::{mppi, select_bfdr, select_median_model, summarize, PosteriorSummary};
use zidm::model::{CountMatrix, DesignMatrix, Hyperparameters, Model, ModelKind, SelectionMask};
use zidm::sampler::{run_mcmc, Counter, McmcConfig};
use zidm::simulation::{self, ScenarioSpec};
use zidm::ZidmError;

fn to_py(e: ZidmError) -> PyErr {
    match e {
        ZidmError::Numerical(m) | ZidmError::Invariant(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix<T: Clone>(rows: Vec<Vec<T>>, what: &str) -> PyResult<Array2<T>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != p) {
        return Err(PyValueError::new_err(format!("{what}: row {i} has {} entries, expected {p}", rows[i].len())));
    }
    Ok(Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).expect("rectangular"))
}

fn nested<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_kind(model: &str) -> PyResult<ModelKind> {
    match model {
        "zidm" => Ok(ModelKind::Zidm),
        "dm" => Ok(ModelKind::Dm),
        _ => Err(PyValueError::new_err(format!("model must be 'zidm' or 'dm', got '{model}'"))),
    }
}

/// Result of [`fit`]: posterior means, inclusion probabilities and the
/// selected coefficients.
#[pyclass(frozen, get_all)]
pub struct FitResult {
    pub model: String,
    pub samples: usize,
    /// Per-component population structural-zero probability; None for dm.
    pub zero_inflation: Option<Vec<f64>>,
    pub composition: Vec<f64>,
    /// Posterior mean ψ (N×J).
    pub abundance: Vec<Vec<f64>>,
    pub mppi_gamma: Vec<Vec<f64>>,
    pub mppi_theta: Option<Vec<Vec<f64>>>,
    pub selected_gamma: Vec<Vec<bool>>,
    pub selected_theta: Option<Vec<Vec<bool>>>,
    /// Kernel acceptance rates; None for kernels that never ran.
    pub acceptance: BTreeMap<String, Option<f64>>,
    pub seconds: f64,
    summary: String,
}

#[pymethods]
impl FitResult {
    /// Full posterior summary (means, intervals, ESS) as JSON.
    fn summary_json(&self) -> String {
        self.summary.clone()
    }

    fn __repr__(&self) -> String {
        format!("FitResult(model='{}', samples={})", self.model, self.samples)
    }
}

fn select(probs: &Array2<f64>, forced: &Array2<bool>, rule: &str, cutoff: Option<f64>) -> PyResult<Array2<bool>> {
    let mut sel = match rule {
        "median" => select_median_model(probs, cutoff.unwrap_or(0.5)).map_err(to_py)?,
        "bfdr" => select_bfdr(probs, cutoff.unwrap_or(0.05), Some(forced)).map_err(to_py)?.0,
        _ => return Err(PyValueError::new_err(format!("rule must be 'median' or 'bfdr', got '{rule}'"))),
    };
    sel.zip_mut_with(forced, |a, &f| *a |= f);
    Ok(sel)
}

fn rate(c: &Counter) -> Option<f64> {
    (c.attempts > 0).then(|| c.rate())
}

/// Fits the zero-inflated (or plain) Dirichlet-multinomial regression.
///
/// `counts` is N×J non-negative integers; `covariates` is N×K without an
/// intercept column (one is added). `rule` is 'median' (cutoff = MPPI
/// threshold, default 0.5) or 'bfdr' (cutoff = alpha, default 0.05).
#[pyfunction]
#[pyo3(signature = (
    counts, covariates=None, *, model="zidm", iterations=20_000, burn_in=None, thin=10, seed=0, chains=1,
    selection=true, standardize=true, rule="median", cutoff=None, level=0.95, adapt_rw=false
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    counts: Vec<Vec<u64>>,
    covariates: Option<Vec<Vec<f64>>>,
    model: &str,
    iterations: usize,
    burn_in: Option<usize>,
    thin: usize,
    seed: u64,
    chains: usize,
    selection: bool,
    standardize: bool,
    rule: &str,
    cutoff: Option<f64>,
    level: f64,
    adapt_rw: bool,
) -> PyResult<FitResult> {
    let kind = parse_kind(model)?;
    let counts = CountMatrix::new(matrix(counts, "counts")?).map_err(to_py)?;
    let design = match covariates {
        Some(rows) => {
            let x = matrix(rows, "covariates")?;
            if x.nrows() != counts.n() {
                return Err(PyValueError::new_err(format!("{} covariate rows for {} count rows", x.nrows(), counts.n())));
            }
            let names = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
            DesignMatrix::from_covariates(&x, names, standardize).map_err(to_py)?
        }
        None => DesignMatrix::intercept_only(counts.n()),
    };
    let mut cfg = McmcConfig::new(iterations, seed);
    if let Some(b) = burn_in {
        cfg.burn_in = b;
    }
    cfg.thin = thin;
    cfg.chains = chains;
    cfg.adapt_rw = adapt_rw;
    cfg.validate().map_err(to_py)?;
    let hyper = Hyperparameters::default();
    let mask = SelectionMask::new(counts.j(), design.p(), design.p(), selection);
    let m = Model::new(&counts, &design, &design, &hyper, &mask, kind).map_err(to_py)?;

    let start = std::time::Instant::now();
    let (out, summary): (_, PosteriorSummary) = py
        .detach(|| {
            let out = run_mcmc(&m, &cfg)?;
            let summary = summarize(&out.trace, level)?;
            Ok::<_, ZidmError>((out, summary))
        })
        .map_err(to_py)?;
    let seconds = start.elapsed().as_secs_f64();

    let probs = mppi(&out.trace).map_err(to_py)?;
    let selected_gamma = select(&probs.gamma, mask.forced_gamma(), rule, cutoff)?;
    let selected_theta = probs.theta.as_ref().map(|t| select(t, mask.forced_theta(), rule, cutoff)).transpose()?;
    let d = &out.diagnostics;
    let acceptance = [
        ("expand", &d.expand),
        ("contract", &d.contract),
        ("gamma_add", &d.gamma_add),
        ("gamma_delete", &d.gamma_delete),
        ("gamma_within", &d.gamma_within),
        ("theta_add", &d.theta_add),
        ("theta_delete", &d.theta_delete),
    ]
    .into_iter()
    .map(|(k, c)| (k.to_string(), rate(c)))
    .collect();

    Ok(FitResult {
        model: model.to_string(),
        samples: summary.samples,
        zero_inflation: summary.zero_inflation.as_ref().map(|v| v.iter().map(|s| s.mean).collect()),
        composition: summary.composition.iter().map(|s| s.mean).collect(),
        abundance: summary.psi.as_ref().map(|rows| rows.iter().map(|r| r.iter().map(|s| s.mean).collect()).collect()).unwrap_or_default(),
        mppi_gamma: nested(&probs.gamma),
        mppi_theta: probs.theta.as_ref().map(nested),
        selected_gamma: nested(&selected_gamma),
        selected_theta: selected_theta.as_ref().map(nested),
        acceptance,
        seconds,
        summary: serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    })
}

/// A simulated dataset with its generating truth.
#[pyclass(frozen, get_all)]
pub struct SimulatedData {
    pub counts: Vec<Vec<u64>>,
    /// Covariates without the intercept column.
    pub covariates: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<bool>>,
    pub beta_gamma: Vec<Vec<f64>>,
    pub beta_theta: Vec<Vec<f64>>,
    pub active_gamma: Vec<Vec<bool>>,
    pub active_theta: Vec<Vec<bool>>,
    pub zero_inflation: Vec<f64>,
    pub composition: Vec<f64>,
    pub zero_fraction: f64,
}

/// Draws replicate `replicate` of a named scenario preset.
#[pyfunction]
#[pyo3(signature = (preset, *, seed=None, replicate=0))]
fn simulate(preset: &str, seed: Option<u64>, replicate: u64) -> PyResult<SimulatedData> {
    let mut spec = ScenarioSpec::preset(preset).ok_or_else(|| {
        PyValueError::new_err(format!("unknown preset '{preset}'; choose from {:?}", ScenarioSpec::preset_names()))
    })?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = simulation::gen_scenario(&spec, &mut RngStream::new(spec.seed, replicate)).map_err(to_py)?;
    let t = &data.truth;
    Ok(SimulatedData {
        counts: nested(data.counts.counts()),
        covariates: data.design.x().outer_iter().map(|r| r.iter().skip(1).copied().collect()).collect(),
        psi: nested(&t.psi),
        eta: nested(&t.eta),
        beta_gamma: nested(&t.beta_gamma),
        beta_theta: nested(&t.beta_theta),
        active_gamma: nested(&t.active_gamma),
        active_theta: nested(&t.active_theta),
        zero_inflation: t.zero_inflation().to_vec(),
        composition: t.composition().to_vec(),
        zero_fraction: data.zero_fraction(),
    })
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    ScenarioSpec::preset_names().to_vec()
}

/// Bayesian FDR selection over a J×P MPPI table; returns (selected, threshold).
#[pyfunction]
#[pyo3(name = "select_bfdr", signature = (mppi, alpha=0.05))]
fn py_select_bfdr(mppi: Vec<Vec<f64>>, alpha: f64) -> PyResult<(Vec<Vec<bool>>, f64)> {
    let (sel, kappa) = select_bfdr(&matrix(mppi, "mppi")?, alpha, None).map_err(to_py)?;
    Ok((nested(&sel), kappa))
}

#[pyfunction]
#[pyo3(name = "select_median", signature = (mppi, threshold=0.5))]
fn py_select_median(mppi: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<bool>>> {
    Ok(nested(&select_median_model(&matrix(mppi, "mppi")?, threshold).map_err(to_py)?))
}

/// Sensitivity, specificity, MCC and F1 as a dict.
#[pyfunction]
fn selection_metrics(selected: Vec<bool>, truth: Vec<bool>) -> PyResult<BTreeMap<&'static str, f64>> {
    let m = simulation::selection_metrics(&selected, &truth).map_err(to_py)?;
    Ok([("sens", m.sens), ("spec", m.spec), ("mcc", m.mcc), ("f1", m.f1)].into_iter().collect())
}

#[pyfunction]
fn metric_abs(est: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    simulation::metric_abs(&est, &truth).map_err(to_py)
}

#[pyfunction]
fn metric_frob(est: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    simulation::metric_frob(&est, &truth).map_err(to_py)
}

#[pyfunction]
fn metric_simp(est: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    simulation::metric_simp(&matrix(est, "est")?, &matrix(truth, "truth")?).map_err(to_py)
}

#[pyfunction]
fn metric_cov(intervals: Vec<(f64, f64)>, truth: Vec<f64>) -> PyResult<f64> {
    simulation::metric_cov(&intervals, &truth).map_err(to_py)
}

#[pymodule]
fn pyzidm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FitResult>()?;
    m.add_class::<SimulatedData>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(py_select_bfdr, m)?)?;
    m.add_function(wrap_pyfunction!(py_select_median, m)?)?;
    m.add_function(wrap_pyfunction!(selection_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(metric_abs, m)?)?;
    m.add_function(wrap_pyfunction!(metric_frob, m)?)?;
    m.add_function(wrap_pyfunction!(metric_simp, m)?)?;
    m.add_function(wrap_pyfunction!(metric_cov, m)?)?;
    Ok(())
}
