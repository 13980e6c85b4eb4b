//! Posterior summaries of a [`Trace`]: inclusion probabilities, selection
//! rules, population-level estimands and interval summaries.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZidmError};
use crate::model::{Sample, Trace};

/// Marginal posterior probabilities of inclusion, J×P per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Mppi {
    pub gamma: Array2<f64>,
    /// Absent for the plain DM model.
    pub theta: Option<Array2<f64>>,
}

fn indicator_mean<'s>(samples: impl Iterator<Item = &'s Array2<bool>>, shape: (usize, usize)) -> Array2<f64> {
    let mut sum = Array2::<f64>::zeros(shape);
    let mut count = 0usize;
    for s in samples {
        sum.zip_mut_with(s, |a, &b| *a += b as u8 as f64);
        count += 1;
    }
    sum / count as f64
}

/// Elementwise mean of the stored inclusion indicators.
pub fn mppi(trace: &Trace) -> Result<Mppi> {
    if trace.is_empty() {
        return Err(ZidmError::EmptyInput("trace has no stored samples".into()));
    }
    let m = &trace.meta;
    let gamma = indicator_mean(trace.samples.iter().map(|s| &s.varphi), (m.j, m.p_gamma));
    let theta = if m.kind.zero_inflated() {
        let zs: Option<Vec<&Array2<bool>>> = trace.samples.iter().map(|s| s.zeta.as_ref()).collect();
        let zs = zs.ok_or_else(|| ZidmError::Invariant("zero-inflated trace is missing zeta".into()))?;
        Some(indicator_mean(zs.into_iter(), (m.j, m.p_theta)))
    } else {
        None
    };
    Ok(Mppi { gamma, theta })
}

/// Median-model rule: include every coefficient with `mppi >= threshold`.
pub fn select_median_model(mppi: &Array2<f64>, threshold: f64) -> Result<Array2<bool>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ZidmError::domain(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    Ok(mppi.mapv(|v| v >= threshold))
}

/// Bayesian FDR selection over a flat list of MPPIs.
///
/// Selects the largest set `{k : mppi_k >= κ}` whose average exclusion
/// probability `1 − mppi` is at most `alpha`. Tied MPPIs enter or leave
/// together. Returns the selection and `κ` (1 when nothing qualifies).
pub fn select_bfdr_values(mppi: &[f64], alpha: f64) -> Result<(Vec<bool>, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ZidmError::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sorted: Vec<f64> = mppi.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut kappa = 1.0;
    let mut found = false;
    let mut exclusion = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        exclusion += 1.0 - v;
        let tie_follows = sorted.get(k + 1).is_some_and(|&next| next == v);
        if tie_follows {
            continue;
        }
        // Averages grow with k, so the first failure ends the search.
        if exclusion / (k + 1) as f64 <= alpha + 1e-12 {
            kappa = v;
            found = true;
        } else {
            break;
        }
    }
    let selected = mppi.iter().map(|&v| found && v >= kappa).collect();
    Ok((selected, kappa))
}

/// Bayesian FDR selection on a J×P table. Entries flagged in `forced` are
/// left out of the error-rate average and always selected.
pub fn select_bfdr(mppi: &Array2<f64>, alpha: f64, forced: Option<&Array2<bool>>) -> Result<(Array2<bool>, f64)> {
    let pinned: Vec<bool> = match forced {
        Some(f) if f.dim() != mppi.dim() => {
            return Err(ZidmError::shape(format!("forced mask {:?} does not match MPPI table {:?}", f.dim(), mppi.dim())))
        }
        Some(f) => f.iter().copied().collect(),
        None => vec![false; mppi.len()],
    };
    let flat: Vec<f64> = mppi.iter().copied().collect();
    let free: Vec<usize> = (0..flat.len()).filter(|&k| !pinned[k]).collect();
    let values: Vec<f64> = free.iter().map(|&k| flat[k]).collect();
    let (chosen, kappa) = select_bfdr_values(&values, alpha)?;
    let mut out = pinned;
    for (&k, c) in free.iter().zip(chosen) {
        out[k] |= c;
    }
    let selected = Array2::from_shape_vec(mppi.dim(), out).expect("shape preserved");
    Ok((selected, kappa))
}

/// Per-sample population-level estimands.
#[derive(Debug, Clone)]
pub struct PopulationDraws {
    /// `Θ_j = 1 / (1 + exp(β_θj0))`, the probability that component `j`
    /// is a structural zero (at covariates equal to zero).
    pub zero_inflation: Option<Vec<Array1<f64>>>,
    /// `Γ_j = exp(β_γj0) / Σ_k exp(β_γk0)`.
    pub composition: Vec<Array1<f64>>,
    /// `ψ_ij = c_ij / T_i` when stored in the trace.
    pub psi: Option<Vec<Array2<f64>>>,
    /// True when both design matrices are intercept-only, so that the
    /// population quantities are marginal summaries rather than values at
    /// covariates = 0.
    pub intercept_only: bool,
}

pub fn zero_inflation_probability(beta_theta0: f64) -> f64 {
    1.0 / (1.0 + beta_theta0.exp())
}

pub fn composition_probabilities(beta_gamma0: impl Iterator<Item = f64>) -> Array1<f64> {
    let b: Vec<f64> = beta_gamma0.collect();
    let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Array1<f64> = b.iter().map(|v| (v - max).exp()).collect();
    let total = w.sum();
    w / total
}

pub fn population_estimands(trace: &Trace) -> PopulationDraws {
    let m = &trace.meta;
    let zero_inflation = m.kind.zero_inflated().then(|| {
        trace
            .samples
            .iter()
            .filter_map(|s| s.beta_theta.as_ref())
            .map(|b| b.column(0).mapv(zero_inflation_probability))
            .collect()
    });
    let composition = trace.samples.iter().map(|s| composition_probabilities(s.beta_gamma.column(0).iter().copied())).collect();
    let psi = trace
        .samples
        .iter()
        .map(sample_psi)
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty());
    PopulationDraws { zero_inflation, composition, psi, intercept_only: m.p_gamma == 1 && m.p_theta == 1 }
}

fn sample_psi(s: &Sample) -> Option<Array2<f64>> {
    if let Some(p) = &s.psi {
        return Some(p.clone());
    }
    s.c.as_ref().map(|c| {
        let mut psi = c.clone();
        for mut row in psi.rows_mut() {
            let t = row.sum();
            row /= t;
        }
        psi
    })
}

/// Linear-interpolation quantile of sorted data (`(n − 1)·q` indexing;
/// type 7 in Hyndman and Fan's taxonomy).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size of one chain by Geyer's initial positive sequence.
/// A constant chain reports its length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let var = acov(0);
    if var <= 0.0 || !var.is_finite() {
        return n as f64;
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        // Monotone initial sequence: pairs are non-increasing.
        let pair = ((acov(lag) + acov(lag + 1)) / var).min(prev_pair);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    // Capped at n·log10(n) as antithetic chains can otherwise explode it.
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
}

impl ScalarSummary {
    /// `chains` holds the draws of each chain separately; intervals pool
    /// them and ESS is summed over chains.
    pub fn from_chains(chains: &[Vec<f64>], level: f64) -> ScalarSummary {
        let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        pooled.sort_by(f64::total_cmp);
        let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
        let mean = (pooled.iter().sum::<f64>() / pooled.len() as f64).clamp(lo, hi);
        let tail = 0.5 * (1.0 - level);
        let lower = quantile_sorted(&pooled, tail).min(mean);
        let upper = quantile_sorted(&pooled, 1.0 - tail).max(mean);
        let ess = chains.iter().filter(|c| !c.is_empty()).map(|c| effective_sample_size(c)).sum();
        ScalarSummary { mean, lower, upper, ess }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub j: usize,
    pub p: usize,
    pub mppi: f64,
    /// Model-averaged draws: excluded iterations contribute zero.
    pub value: ScalarSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub level: f64,
    pub samples: usize,
    pub chains: usize,
    pub intercept_only: bool,
    /// Θ_j per component; absent for the plain DM model.
    pub zero_inflation: Option<Vec<ScalarSummary>>,
    /// Γ_j per component.
    pub composition: Vec<ScalarSummary>,
    /// ψ_ij, N rows of J entries; absent when not monitored.
    pub psi: Option<Vec<Vec<ScalarSummary>>>,
    pub mppi_gamma: Vec<Vec<f64>>,
    pub mppi_theta: Option<Vec<Vec<f64>>>,
    /// Coefficients included in at least one stored sample.
    pub beta_gamma: Vec<CoefficientSummary>,
    pub beta_theta: Option<Vec<CoefficientSummary>>,
}

struct ChainSplitter {
    bounds: Vec<(usize, usize)>,
}

impl ChainSplitter {
    fn new(samples: &[Sample]) -> Self {
        let mut bounds = Vec::new();
        let mut start = 0;
        for k in 1..=samples.len() {
            if k == samples.len() || samples[k].chain != samples[start].chain {
                bounds.push((start, k));
                start = k;
            }
        }
        ChainSplitter { bounds }
    }

    fn summarize(&self, level: f64, value: impl Fn(usize) -> f64) -> ScalarSummary {
        let chains: Vec<Vec<f64>> = self.bounds.iter().map(|&(a, b)| (a..b).map(&value).collect()).collect();
        ScalarSummary::from_chains(&chains, level)
    }
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn coefficient_summaries(
    splitter: &ChainSplitter,
    level: f64,
    mppi: &Array2<f64>,
    draws: &[&Array2<f64>],
) -> Vec<CoefficientSummary> {
    let mut out = Vec::new();
    for ((j, p), &prob) in mppi.indexed_iter() {
        if prob > 0.0 {
            out.push(CoefficientSummary { j, p, mppi: prob, value: splitter.summarize(level, |s| draws[s][[j, p]]) });
        }
    }
    out
}

/// Means, equal-tailed intervals and ESS for Θ_j, Γ_j, ψ_ij and the
/// coefficients, plus MPPI tables.
pub fn summarize(trace: &Trace, level: f64) -> Result<PosteriorSummary> {
    if trace.is_empty() {
        return Err(ZidmError::EmptyInput("trace has no stored samples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ZidmError::domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    let m = &trace.meta;
    let splitter = ChainSplitter::new(&trace.samples);
    let probs = mppi(trace)?;
    let pop = population_estimands(trace);

    let zero_inflation = pop
        .zero_inflation
        .as_ref()
        .map(|draws| (0..m.j).map(|j| splitter.summarize(level, |s| draws[s][j])).collect());
    let composition = (0..m.j).map(|j| splitter.summarize(level, |s| pop.composition[s][j])).collect();
    let psi = pop.psi.as_ref().map(|draws| {
        (0..m.n).map(|i| (0..m.j).map(|j| splitter.summarize(level, |s| draws[s][[i, j]])).collect()).collect()
    });

    let bg: Vec<&Array2<f64>> = trace.samples.iter().map(|s| &s.beta_gamma).collect();
    let beta_gamma = coefficient_summaries(&splitter, level, &probs.gamma, &bg);
    let beta_theta = probs.theta.as_ref().map(|mt| {
        let bt: Vec<&Array2<f64>> = trace.samples.iter().map(|s| s.beta_theta.as_ref().expect("checked by mppi")).collect();
        coefficient_summaries(&splitter, level, mt, &bt)
    });

    Ok(PosteriorSummary {
        level,
        samples: trace.len(),
        chains: splitter.bounds.len(),
        intercept_only: pop.intercept_only,
        zero_inflation,
        composition,
        psi,
        mppi_gamma: to_rows(&probs.gamma),
        mppi_theta: probs.theta.as_ref().map(to_rows),
        beta_gamma,
        beta_theta,
    })
}

/// Number of included covariate terms (intercepts excluded) per stored
/// sample, for each level. Useful as a convergence trace.
pub fn active_term_counts(trace: &Trace) -> Vec<(usize, Option<usize>)> {
    let count = |a: &Array2<bool>| a.indexed_iter().filter(|((_, p), &on)| *p > 0 && on).count();
    trace.samples.iter().map(|s| (count(&s.varphi), s.zeta.as_ref().map(count))).collect()
}
