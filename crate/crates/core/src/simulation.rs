//! Synthetic data with known ground truth, estimation/selection metrics,
//! and replicated simulation studies.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_dirichlet, sample_multinomial, sample_normal, RngStream};
use crate::error::{Result, ZidmError};
use crate::inference::{composition_probabilities, mppi, select_median_model, zero_inflation_probability, ScalarSummary};
use crate::model::{
    gamma_from_linear, CountMatrix, DesignMatrix, Hyperparameters, Model, ModelKind, SelectionMask, Trace,
};
use crate::sampler::{run_mcmc, McmcConfig};

/// Attempts allowed per row before a spec is declared infeasible.
const MAX_ROW_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    pub j: usize,
    /// Design columns including the intercept.
    pub p: usize,
    /// Inclusive range of row totals.
    pub total_count_range: (u64, u64),
    pub beta_theta0_range: (f64, f64),
    pub beta_gamma0_range: (f64, f64),
    /// Non-zero covariate effects per level.
    #[serde(default = "default_n_active")]
    pub n_active: usize,
    /// Effect magnitudes, applied with a random sign.
    #[serde(default = "default_effect_range")]
    pub effect_range: (f64, f64),
    #[serde(default)]
    pub cov_corr: f64,
    #[serde(default = "default_overdispersion")]
    pub overdispersion: f64,
    /// Spread `β_θj0` evenly over its range instead of drawing uniformly.
    #[serde(default = "default_true")]
    pub beta_theta0_grid: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_active() -> usize {
    16
}
fn default_effect_range() -> (f64, f64) {
    (0.9, 1.5)
}
fn default_overdispersion() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ZidmError::Config(msg));
        if self.n == 0 || self.j < 2 || self.p == 0 {
            return bad(format!("need n >= 1, j >= 2, p >= 1; got n={} j={} p={}", self.n, self.j, self.p));
        }
        let (lo, hi) = self.total_count_range;
        if lo == 0 || lo > hi {
            return bad(format!("total_count_range must satisfy 1 <= low <= high, got ({lo}, {hi})"));
        }
        for (name, (a, b)) in [
            ("beta_theta0_range", self.beta_theta0_range),
            ("beta_gamma0_range", self.beta_gamma0_range),
            ("effect_range", self.effect_range),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return bad(format!("{name} must be an ordered finite pair, got ({a}, {b})"));
            }
        }
        if self.effect_range.0 < 0.0 {
            return bad("effect_range holds magnitudes and must be non-negative".into());
        }
        if self.n_active > self.j * (self.p - 1) {
            return bad(format!(
                "n_active {} exceeds the {} available covariate coefficients",
                self.n_active,
                self.j * (self.p - 1)
            ));
        }
        if !(0.0..1.0).contains(&self.cov_corr) {
            return bad(format!("cov_corr must lie in [0, 1), got {}", self.cov_corr));
        }
        if !(self.overdispersion > 0.0 && self.overdispersion < 1.0) {
            return bad(format!("overdispersion must lie in (0, 1), got {}", self.overdispersion));
        }
        Ok(())
    }

    /// Named settings: `scenario1`, `scenario1-reduced`, `scenario2`,
    /// `scenario2-reduced`, `scenario3`, `scenario3-reduced`, `tiny`.
    pub fn preset(name: &str) -> Option<ScenarioSpec> {
        let base = ScenarioSpec {
            n: 100,
            j: 50,
            p: 1,
            total_count_range: (400, 500),
            beta_theta0_range: (0.0, 1.0),
            beta_gamma0_range: (-2.3, 2.3),
            n_active: 0,
            effect_range: (0.9, 1.5),
            cov_corr: 0.0,
            overdispersion: 0.01,
            beta_theta0_grid: true,
            seed: 0,
        };
        let spec = match name {
            "scenario1" => base,
            "scenario1-reduced" => ScenarioSpec { n: 50, j: 20, ..base },
            "scenario2" => ScenarioSpec { p: 100, total_count_range: (1000, 2000), n_active: 16, cov_corr: 0.3, ..base },
            "scenario2-reduced" => ScenarioSpec {
                j: 20,
                p: 20,
                total_count_range: (1000, 2000),
                n_active: 16,
                cov_corr: 0.3,
                ..base
            },
            "scenario3" => ScenarioSpec {
                p: 50,
                total_count_range: (1100, 15000),
                beta_theta0_range: SCENARIO3_BETA_THETA0,
                n_active: 16,
                effect_range: (1.0, 3.0),
                cov_corr: 0.8,
                ..base
            },
            "scenario3-reduced" => ScenarioSpec {
                j: 20,
                p: 20,
                total_count_range: (1100, 15000),
                beta_theta0_range: SCENARIO3_BETA_THETA0,
                n_active: 16,
                effect_range: (1.0, 3.0),
                cov_corr: 0.8,
                ..base
            },
            "tiny" => ScenarioSpec {
                n: 12,
                j: 4,
                p: 3,
                total_count_range: (30, 60),
                n_active: 2,
                cov_corr: 0.3,
                ..base
            },
            _ => return None,
        };
        Some(spec)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["scenario1", "scenario1-reduced", "scenario2", "scenario2-reduced", "scenario3", "scenario3-reduced", "tiny"]
    }
}

/// Baseline at-risk log-odds range calibrated to yield about 30% zero
/// counts under the Scenario 3 totals and effect sizes.
pub const SCENARIO3_BETA_THETA0: (f64, f64) = (3.0, 4.0);

/// The generating parameters and latent draws behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// J×P, intercept in column 0.
    pub beta_gamma: Array2<f64>,
    pub beta_theta: Array2<f64>,
    /// J×P masks of non-zero coefficients (intercepts included).
    pub active_gamma: Array2<bool>,
    pub active_theta: Array2<bool>,
    /// N×J at-risk indicators.
    pub eta: Array2<bool>,
    /// N×J at-risk probabilities.
    pub theta: Array2<f64>,
    /// N×J count probabilities; zero on structural-zero cells.
    pub psi: Array2<f64>,
    pub totals: Vec<u64>,
}

impl GroundTruth {
    /// Population zero-inflation probabilities `1/(1 + exp(β_θj0))`.
    pub fn zero_inflation(&self) -> Array1<f64> {
        self.beta_theta.column(0).mapv(zero_inflation_probability)
    }

    /// Population count probabilities from the `β_γ` intercepts.
    pub fn composition(&self) -> Array1<f64> {
        composition_probabilities(self.beta_gamma.column(0).iter().copied())
    }

    /// N×J structural-zero probabilities `1 − θ_ij`.
    pub fn zero_inflation_individual(&self) -> Array2<f64> {
        self.theta.mapv(|t| 1.0 - t)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub counts: CountMatrix,
    pub design: DesignMatrix,
    pub truth: GroundTruth,
}

impl SimulatedData {
    pub fn zero_fraction(&self) -> f64 {
        self.counts.zero_fraction()
    }

    /// Share of zero counts that fall on at-risk cells.
    pub fn at_risk_zero_share(&self) -> f64 {
        let z = self.counts.counts();
        let (mut zeros, mut at_risk) = (0usize, 0usize);
        for ((i, j), &v) in z.indexed_iter() {
            if v == 0 {
                zeros += 1;
                at_risk += self.truth.eta[[i, j]] as usize;
            }
        }
        if zeros == 0 {
            0.0
        } else {
            at_risk as f64 / zeros as f64
        }
    }
}

/// Intercept plus `p − 1` Gaussian columns with `corr(x_s, x_t) = σ^|s−t|`,
/// generated row by row with the AR(1) recursion.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, p: usize, sigma: f64, rng: &mut R) -> Result<DesignMatrix> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(ZidmError::domain(format!("covariate correlation must lie in [0, 1), got {sigma}")));
    }
    if p == 0 {
        return Err(ZidmError::domain("design needs at least the intercept column"));
    }
    let innovation = (1.0 - sigma * sigma).sqrt();
    let mut x = Array2::<f64>::ones((n, p));
    for i in 0..n {
        let mut prev = 0.0;
        for k in 1..p {
            let e = sample_normal(0.0, 1.0, rng);
            prev = if k == 1 { e } else { sigma * prev + innovation * e };
            x[[i, k]] = prev;
        }
    }
    let names = std::iter::once("intercept".to_string()).chain((1..p).map(|k| format!("x{k}"))).collect();
    DesignMatrix::new(x, names)
}

fn uniform<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn gen_coefficients<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    intercepts: impl Fn(usize, &mut R) -> f64,
    rng: &mut R,
) -> (Array2<f64>, Array2<bool>) {
    let (j, p) = (spec.j, spec.p);
    let mut beta = Array2::zeros((j, p));
    let mut active = Array2::from_elem((j, p), false);
    for k in 0..j {
        beta[[k, 0]] = intercepts(k, rng);
        active[[k, 0]] = true;
    }
    if p > 1 && spec.n_active > 0 {
        for flat in sample_indices(rng, j * (p - 1), spec.n_active).into_iter() {
            let (k, q) = (flat / (p - 1), flat % (p - 1) + 1);
            let magnitude = uniform(spec.effect_range, rng);
            beta[[k, q]] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            active[[k, q]] = true;
        }
    }
    (beta, active)
}

/// One dataset with its ground truth. Draw order: totals, covariates,
/// `β_γ`, `β_θ`, then per row the at-risk indicators (re-drawn whole-row
/// if all are zero), Dirichlet probabilities and multinomial counts.
pub fn gen_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<SimulatedData> {
    spec.validate()?;
    let (n, j) = (spec.n, spec.j);
    let totals: Vec<u64> = (0..n).map(|_| rng.random_range(spec.total_count_range.0..=spec.total_count_range.1)).collect();
    let design = gen_covariates(n, spec.p, spec.cov_corr, rng)?;

    let (beta_gamma, active_gamma) = gen_coefficients(spec, |_, r: &mut R| uniform(spec.beta_gamma0_range, r), rng);
    let grid = spec.beta_theta0_grid;
    let (lo, hi) = spec.beta_theta0_range;
    let (beta_theta, active_theta) = gen_coefficients(
        spec,
        |k, r: &mut R| if grid { lo + (hi - lo) * k as f64 / (j - 1) as f64 } else { uniform((lo, hi), r) },
        rng,
    );

    let lin_gamma = design.x().dot(&beta_gamma.t());
    let lin_theta = design.x().dot(&beta_theta.t());
    let theta = lin_theta.mapv(|t| 1.0 / (1.0 + (-t).exp()));
    let scale = (1.0 - spec.overdispersion) / spec.overdispersion;

    let mut eta = Array2::from_elem((n, j), false);
    let mut psi = Array2::zeros((n, j));
    let mut counts = Array2::zeros((n, j));
    for i in 0..n {
        let mut attempts = 0;
        loop {
            for k in 0..j {
                eta[[i, k]] = rng.random_bool(theta[[i, k]]);
            }
            if eta.row(i).iter().any(|&e| e) {
                break;
            }
            attempts += 1;
            if attempts >= MAX_ROW_REDRAWS {
                return Err(ZidmError::Generation(format!(
                    "row {i}: no at-risk component after {MAX_ROW_REDRAWS} draws; at-risk probabilities too small"
                )));
            }
        }
        let active: Vec<usize> = (0..j).filter(|&k| eta[[i, k]]).collect();
        let weights: Vec<f64> = active.iter().map(|&k| gamma_from_linear(lin_gamma[[i, k]])).collect();
        let total_weight: f64 = weights.iter().sum();
        let alpha: Vec<f64> = weights.iter().map(|w| w / total_weight * scale).collect();
        let probs = if active.len() == 1 { vec![1.0] } else { sample_dirichlet(&alpha, rng)? };
        let draw = sample_multinomial(totals[i], &probs, rng)?;
        for ((&k, &pr), &z) in active.iter().zip(&probs).zip(&draw) {
            psi[[i, k]] = pr;
            counts[[i, k]] = z;
        }
    }

    let truth = GroundTruth { beta_gamma, beta_theta, active_gamma, active_theta, eta, theta, psi, totals };
    Ok(SimulatedData { counts: CountMatrix::new(counts)?, design, truth })
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(ZidmError::shape(format!("estimate has {a} entries but truth has {b}")));
    }
    Ok(())
}

/// Mean absolute error.
pub fn metric_abs(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(est.len(), truth.len())?;
    if est.is_empty() {
        return Err(ZidmError::EmptyInput("no entries to compare".into()));
    }
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / est.len() as f64)
}

/// Frobenius norm of the error.
pub fn metric_frob(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(est.len(), truth.len())?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>().sqrt())
}

/// Mean squared error of the per-row Simpson's index `Σ_j ρ_ij²`.
pub fn metric_simp(est: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(ZidmError::shape(format!("estimate {:?} vs truth {:?}", est.dim(), truth.dim())));
    }
    let simpson = |a: &Array2<f64>| a.map_axis(Axis(1), |r| r.iter().map(|v| v * v).sum::<f64>());
    let (se, st) = (simpson(est), simpson(truth));
    Ok(se.iter().zip(&st).map(|(e, t)| (t - e).powi(2)).sum::<f64>() / est.nrows() as f64)
}

/// Fraction of entries whose interval `[lo, hi]` contains the truth.
pub fn metric_cov(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    check_same_len(intervals.len(), truth.len())?;
    if truth.is_empty() {
        return Err(ZidmError::EmptyInput("no entries to compare".into()));
    }
    let hits = intervals.iter().zip(truth).filter(|((lo, hi), &t)| *lo <= t && t <= *hi).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub sens: f64,
    pub spec: f64,
    pub mcc: f64,
    pub f1: f64,
}

/// Sensitivity, specificity, Matthews correlation and F1.
///
/// Conventions for empty denominators: sensitivity and specificity are 1
/// (nothing to find, nothing missed), MCC and F1 are 0.
pub fn selection_metrics(selected: &[bool], truth_active: &[bool]) -> Result<SelectionMetrics> {
    check_same_len(selected.len(), truth_active.len())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (&s, &t) in selected.iter().zip(truth_active) {
        match (s, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let ratio = |num: f64, den: f64, empty: f64| if den > 0.0 { num / den } else { empty };
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ok(SelectionMetrics {
        sens: ratio(tp, tp + fn_, 1.0),
        spec: ratio(tn, tn + fp, 1.0),
        mcc: ratio(tp * tn - fp * fn_, mcc_den, 0.0),
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_, 0.0),
    })
}

/// Coefficients excluding the intercept column, flattened row-major.
fn covariate_entries<T: Copy>(a: &Array2<T>) -> Vec<T> {
    a.indexed_iter().filter(|((_, p), _)| *p > 0).map(|(_, &v)| v).collect()
}

/// One row of a study table. Estimation rows carry ABS/FROB/SIMP/COV,
/// selection rows carry SENS/SPEC/MCC/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// `None` for the across-replicate mean rows.
    pub replicate: Option<usize>,
    pub model: String,
    pub parameter: String,
    pub abs: Option<f64>,
    pub frob: Option<f64>,
    pub simp: Option<f64>,
    pub cov: Option<f64>,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub mcc: Option<f64>,
    pub f1: Option<f64>,
    pub time_s: Option<f64>,
}

impl StudyRow {
    fn new(replicate: usize, model: &str, parameter: &str) -> Self {
        StudyRow {
            replicate: Some(replicate),
            model: model.into(),
            parameter: parameter.into(),
            abs: None,
            frob: None,
            simp: None,
            cov: None,
            sens: None,
            spec: None,
            mcc: None,
            f1: None,
            time_s: None,
        }
    }

    fn values(&self) -> [Option<f64>; 9] {
        [self.abs, self.frob, self.simp, self.cov, self.sens, self.spec, self.mcc, self.f1, self.time_s]
    }

    fn values_mut(&mut self) -> [&mut Option<f64>; 9] {
        [
            &mut self.abs,
            &mut self.frob,
            &mut self.simp,
            &mut self.cov,
            &mut self.sens,
            &mut self.spec,
            &mut self.mcc,
            &mut self.f1,
            &mut self.time_s,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// Replicates that failed, with the error message. They are excluded
    /// from the means.
    pub failures: Vec<(usize, String)>,
    pub replicates: usize,
}

impl StudyTable {
    /// Per (model, parameter) means over successful replicates, in
    /// first-appearance order.
    pub fn means(&self) -> Vec<StudyRow> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.model.clone(), r.parameter.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(model, parameter)| {
                let group: Vec<&StudyRow> =
                    self.rows.iter().filter(|r| r.model == model && r.parameter == parameter).collect();
                let mut mean = StudyRow { replicate: None, ..group[0].clone() };
                for (slot, idx) in mean.values_mut().into_iter().zip(0..) {
                    let vals: Vec<f64> = group.iter().filter_map(|r| r.values()[idx]).collect();
                    *slot = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                }
                mean
            })
            .collect()
    }

    pub fn rows_for<'s>(&'s self, model: &'s str, parameter: &'s str) -> impl Iterator<Item = &'s StudyRow> + 's {
        self.rows.iter().filter(move |r| r.model == model && r.parameter == parameter)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    pub hyper: Hyperparameters,
    /// Also fit the plain DM model (nested baseline).
    pub fit_dm: bool,
    /// Spike-and-slab selection on covariate coefficients.
    pub selection: bool,
    pub level: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { hyper: Hyperparameters::default(), fit_dm: true, selection: true, level: 0.95 }
    }
}

/// Posterior mean and equal-tailed interval of each entry, given per-sample
/// flat vectors.
fn entrywise(draws: &[Vec<f64>], level: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let k = draws[0].len();
    (0..k)
        .map(|e| {
            let column: Vec<f64> = draws.iter().map(|d| d[e]).collect();
            let s = ScalarSummary::from_chains(&[column], level);
            (s.mean, (s.lower, s.upper))
        })
        .unzip()
}

#[allow(clippy::too_many_arguments)]
fn estimation_row(
    replicate: usize,
    model: &str,
    parameter: &str,
    draws: &[Vec<f64>],
    truth: &[f64],
    rows: usize,
    level: f64,
    seconds: f64,
) -> Result<StudyRow> {
    let (mean, intervals) = entrywise(draws, level);
    let cols = truth.len() / rows;
    let shape = (rows, cols);
    let est = Array2::from_shape_vec(shape, mean.clone()).map_err(|e| ZidmError::shape(e.to_string()))?;
    let tru = Array2::from_shape_vec(shape, truth.to_vec()).map_err(|e| ZidmError::shape(e.to_string()))?;
    let mut row = StudyRow::new(replicate, model, parameter);
    row.abs = Some(metric_abs(&mean, truth)?);
    row.frob = Some(metric_frob(&mean, truth)?);
    row.simp = Some(metric_simp(&est, &tru)?);
    row.cov = Some(metric_cov(&intervals, truth)?);
    row.time_s = Some(seconds);
    Ok(row)
}

fn selection_row(replicate: usize, model: &str, parameter: &str, selected: &Array2<bool>, truth: &Array2<bool>) -> Result<StudyRow> {
    let m = selection_metrics(&covariate_entries(selected), &covariate_entries(truth))?;
    let mut row = StudyRow::new(replicate, model, parameter);
    row.sens = Some(m.sens);
    row.spec = Some(m.spec);
    row.mcc = Some(m.mcc);
    row.f1 = Some(m.f1);
    Ok(row)
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn score_fit(
    replicate: usize,
    label: &str,
    trace: &Trace,
    data: &SimulatedData,
    opts: &StudyOptions,
    seconds: f64,
) -> Result<Vec<StudyRow>> {
    let truth = &data.truth;
    let (n, j) = (data.counts.n(), data.counts.j());
    let x = data.design.x();
    let level = opts.level;
    let intercept_only = data.design.p() == 1;
    let mut rows = Vec::new();

    if let Some(first) = trace.samples.first() {
        if first.beta_theta.is_some() {
            if intercept_only {
                let draws: Vec<Vec<f64>> = trace
                    .samples
                    .iter()
                    .map(|s| s.beta_theta.as_ref().unwrap().column(0).mapv(zero_inflation_probability).to_vec())
                    .collect();
                rows.push(estimation_row(replicate, label, "Theta", &draws, &truth.zero_inflation().to_vec(), 1, level, seconds)?);
            } else {
                let draws: Vec<Vec<f64>> = trace
                    .samples
                    .iter()
                    .map(|s| flat(&x.dot(&s.beta_theta.as_ref().unwrap().t()).mapv(zero_inflation_probability)))
                    .collect();
                let t = flat(&truth.zero_inflation_individual());
                rows.push(estimation_row(replicate, label, "Theta_ij", &draws, &t, n, level, seconds)?);
            }
        }
    }
    if intercept_only {
        let draws: Vec<Vec<f64>> = trace
            .samples
            .iter()
            .map(|s| composition_probabilities(s.beta_gamma.column(0).iter().copied()).to_vec())
            .collect();
        rows.push(estimation_row(replicate, label, "Gamma", &draws, &truth.composition().to_vec(), 1, level, seconds)?);
    }
    let psi: Option<Vec<Vec<f64>>> = trace.samples.iter().map(|s| s.psi.as_ref().map(flat)).collect();
    if let Some(draws) = psi {
        rows.push(estimation_row(replicate, label, "psi", &draws, &flat(&truth.psi), n, level, seconds)?);
    }
    debug_assert_eq!(truth.psi.dim(), (n, j));

    if !intercept_only && opts.selection {
        let probs = mppi(trace)?;
        rows.push(selection_row(replicate, label, "beta_gamma", &select_median_model(&probs.gamma, 0.5)?, &truth.active_gamma)?);
        if let Some(pt) = probs.theta {
            rows.push(selection_row(replicate, label, "beta_theta", &select_median_model(&pt, 0.5)?, &truth.active_theta)?);
        }
    }
    Ok(rows)
}

fn run_replicate(spec: &ScenarioSpec, replicate: usize, mcmc: &McmcConfig, opts: &StudyOptions) -> Result<Vec<StudyRow>> {
    let mut rng = RngStream::new(spec.seed, replicate as u64);
    let data = gen_scenario(spec, &mut rng)?;
    let p = data.design.p();
    let mask = SelectionMask::new(spec.j, p, p, opts.selection && p > 1);
    let mut cfg = mcmc.clone();
    cfg.seed = mcmc.seed.wrapping_add((replicate as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    cfg.monitor.psi = true;

    let selecting = opts.selection && p > 1;
    let zidm_label = if selecting { "ZIDMbvs" } else { "ZIDM" };
    let dm_label = if selecting { "DMbvs" } else { "DM" };
    let mut kinds = vec![(ModelKind::Zidm, zidm_label)];
    if opts.fit_dm {
        kinds.push((ModelKind::Dm, dm_label));
    }
    let mut rows = Vec::new();
    for (kind, label) in kinds {
        let model = Model::new(&data.counts, &data.design, &data.design, &opts.hyper, &mask, kind)?;
        let start = Instant::now();
        let out = run_mcmc(&model, &cfg)?;
        let seconds = start.elapsed().as_secs_f64();
        rows.extend(score_fit(replicate, label, &out.trace, &data, opts, seconds)?);
    }
    Ok(rows)
}

/// Generates, fits and scores `replicates` datasets. Replicate `r` uses
/// generation stream `r` of `spec.seed`, so tables are reproducible
/// regardless of scheduling.
pub fn run_replicate_study(spec: &ScenarioSpec, replicates: usize, mcmc: &McmcConfig, opts: &StudyOptions) -> Result<StudyTable> {
    spec.validate()?;
    mcmc.validate()?;
    if replicates == 0 {
        return Err(ZidmError::Config("replicates must be at least 1".into()));
    }
    let results: Vec<(usize, Result<Vec<StudyRow>>)> =
        (0..replicates).into_par_iter().map(|r| (r, run_replicate(spec, r, mcmc, opts))).collect();
    let mut table = StudyTable { replicates, ..Default::default() };
    for (r, res) in results {
        match res {
            Ok(rows) => table.rows.extend(rows),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                table.failures.push((r, e.to_string()));
            }
        }
    }
    Ok(table)
}
