//! Data containers, priors, latent state and its initialization.
//!
//! Conventions used throughout the crate: `N` observations (rows of the
//! count matrix), `J` compositional components (columns), and `P` columns
//! of a design matrix including the leading intercept column. Each
//! component `j` carries a row of regression coefficients for its Dirichlet
//! concentration (`beta_gamma`, indicator `varphi`) and for its at-risk
//! probability (`beta_theta`, indicator `zeta`).

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_gamma, sample_normal};
use crate::error::{Result, ZidmError};

/// Bounds applied to `exp(x'β)` for the Dirichlet concentration.
pub const GAMMA_MIN: f64 = 1e-10;
pub const GAMMA_MAX: f64 = 1e10;

/// N×J matrix of compositional counts. Every row has a positive total.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    counts: Array2<u64>,
    row_totals: Vec<u64>,
    taxon_names: Vec<String>,
    sample_ids: Vec<String>,
}

impl CountMatrix {
    pub fn new(counts: Array2<u64>) -> Result<Self> {
        let (n, j) = counts.dim();
        let taxa = (0..j).map(|k| format!("taxon_{k}")).collect();
        let samples = (0..n).map(|i| format!("sample_{i}")).collect();
        Self::with_names(counts, taxa, samples)
    }

    pub fn with_names(counts: Array2<u64>, taxon_names: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        let (n, j) = counts.dim();
        if n == 0 || j < 2 {
            return Err(ZidmError::shape(format!(
                "count matrix must have at least one row and two columns, got {n}x{j}"
            )));
        }
        if taxon_names.len() != j || sample_ids.len() != n {
            return Err(ZidmError::shape(format!(
                "{} taxon names and {} sample ids for a {n}x{j} count matrix",
                taxon_names.len(),
                sample_ids.len()
            )));
        }
        let row_totals: Vec<u64> = counts.rows().into_iter().map(|r| r.sum()).collect();
        if let Some(i) = row_totals.iter().position(|&t| t == 0) {
            return Err(ZidmError::domain(format!(
                "row {i} ({}) has no counts; every observation needs a positive total",
                sample_ids[i]
            )));
        }
        Ok(CountMatrix { counts, row_totals, taxon_names, sample_ids })
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn j(&self) -> usize {
        self.counts.ncols()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[[i, j]]
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.row_totals[i]
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn taxon_names(&self) -> &[String] {
        &self.taxon_names
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Fraction of cells that are zero.
    pub fn zero_fraction(&self) -> f64 {
        self.counts.iter().filter(|&&v| v == 0).count() as f64 / self.counts.len() as f64
    }
}

/// N×P covariates with a leading intercept column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: Array2<f64>,
    names: Vec<String>,
    standardized: bool,
}

impl DesignMatrix {
    /// Wraps a full design matrix whose first column must be identically 1.
    pub fn new(x: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(ZidmError::shape("design matrix is empty"));
        }
        if names.len() != x.ncols() {
            return Err(ZidmError::shape(format!("{} names for {} columns", names.len(), x.ncols())));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(ZidmError::domain("design matrix column 0 must be the intercept (all ones)"));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(ZidmError::domain(format!("design matrix holds a non-finite value {v}")));
        }
        Ok(DesignMatrix { x, names, standardized: false })
    }

    /// Intercept-only design for `n` observations.
    pub fn intercept_only(n: usize) -> Self {
        DesignMatrix { x: Array2::ones((n, 1)), names: vec!["intercept".into()], standardized: false }
    }

    /// Builds a design from raw covariates (without an intercept column),
    /// prepending the intercept and optionally standardizing each covariate
    /// to sample mean 0 and sample standard deviation 1.
    pub fn from_covariates(covariates: &Array2<f64>, names: Vec<String>, standardize: bool) -> Result<Self> {
        let (n, k) = covariates.dim();
        if names.len() != k {
            return Err(ZidmError::shape(format!("{} names for {k} covariates", names.len())));
        }
        if n < 2 && standardize && k > 0 {
            return Err(ZidmError::shape("standardization needs at least two observations"));
        }
        let mut x = Array2::ones((n, k + 1));
        for (p, col) in covariates.columns().into_iter().enumerate() {
            let mut dest = x.column_mut(p + 1);
            dest.assign(&col);
            if standardize {
                let mean = col.mean().unwrap_or(0.0);
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(ZidmError::domain(format!(
                        "covariate '{}' is constant and cannot be standardized",
                        names[p]
                    )));
                }
                dest.mapv_inplace(|v| (v - mean) / sd);
            }
        }
        let mut all = vec!["intercept".to_string()];
        all.extend(names);
        let mut design = DesignMatrix::new(x, all)?;
        design.standardized = standardize;
        Ok(design)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.x[[i, p]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }
}

/// Prior hyperparameters and the within-step proposal scale for `beta_gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub sigma2_beta_gamma: f64,
    pub sigma2_beta_theta: f64,
    pub a_varphi: f64,
    pub b_varphi: f64,
    pub a_zeta: f64,
    pub b_zeta: f64,
    pub rw_step_gamma: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            sigma2_beta_gamma: 10.0,
            sigma2_beta_theta: 10.0,
            a_varphi: 1.0,
            b_varphi: 1.0,
            a_zeta: 1.0,
            b_zeta: 1.0,
            rw_step_gamma: 0.5,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma2_beta_gamma", self.sigma2_beta_gamma),
            ("sigma2_beta_theta", self.sigma2_beta_theta),
            ("a_varphi", self.a_varphi),
            ("b_varphi", self.b_varphi),
            ("a_zeta", self.a_zeta),
            ("b_zeta", self.b_zeta),
            ("rw_step_gamma", self.rw_step_gamma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ZidmError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which coefficients are fixed into the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    forced_gamma: Array2<bool>,
    forced_theta: Array2<bool>,
    selection_enabled: bool,
}

impl SelectionMask {
    /// Intercepts forced in at both levels. With selection disabled every
    /// coefficient is forced, which gives plain (non-selecting) regression.
    pub fn new(j: usize, p_gamma: usize, p_theta: usize, selection_enabled: bool) -> Self {
        let mut forced_gamma = Array2::from_elem((j, p_gamma), !selection_enabled);
        let mut forced_theta = Array2::from_elem((j, p_theta), !selection_enabled);
        forced_gamma.column_mut(0).fill(true);
        forced_theta.column_mut(0).fill(true);
        SelectionMask { forced_gamma, forced_theta, selection_enabled }
    }

    pub fn force_gamma(&mut self, j: usize, p: usize) {
        self.forced_gamma[[j, p]] = true;
    }

    pub fn force_theta(&mut self, j: usize, p: usize) {
        self.forced_theta[[j, p]] = true;
    }

    pub fn forced_gamma(&self) -> &Array2<bool> {
        &self.forced_gamma
    }

    pub fn forced_theta(&self) -> &Array2<bool> {
        &self.forced_theta
    }

    pub fn selection_enabled(&self) -> bool {
        self.selection_enabled
    }
}

/// Zero-inflated model or its nested plain Dirichlet-multinomial special
/// case (every at-risk indicator fixed to 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Zidm,
    Dm,
}

impl ModelKind {
    pub fn zero_inflated(self) -> bool {
        matches!(self, ModelKind::Zidm)
    }
}

/// Everything the sampler conditions on: data, priors and model structure.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub counts: &'a CountMatrix,
    pub x_gamma: &'a DesignMatrix,
    pub x_theta: &'a DesignMatrix,
    pub hyper: &'a Hyperparameters,
    pub mask: &'a SelectionMask,
    pub kind: ModelKind,
}

impl<'a> Model<'a> {
    pub fn new(
        counts: &'a CountMatrix,
        x_gamma: &'a DesignMatrix,
        x_theta: &'a DesignMatrix,
        hyper: &'a Hyperparameters,
        mask: &'a SelectionMask,
        kind: ModelKind,
    ) -> Result<Self> {
        let n = counts.n();
        if x_gamma.n() != n || x_theta.n() != n {
            return Err(ZidmError::shape(format!(
                "counts have {n} rows but designs have {} and {}",
                x_gamma.n(),
                x_theta.n()
            )));
        }
        let want_gamma = (counts.j(), x_gamma.p());
        let want_theta = (counts.j(), x_theta.p());
        if mask.forced_gamma.dim() != want_gamma || mask.forced_theta.dim() != want_theta {
            return Err(ZidmError::shape(format!(
                "selection mask is {:?}/{:?} but model needs {want_gamma:?}/{want_theta:?}",
                mask.forced_gamma.dim(),
                mask.forced_theta.dim()
            )));
        }
        hyper.validate()?;
        Ok(Model { counts, x_gamma, x_theta, hyper, mask, kind })
    }

    pub fn n(&self) -> usize {
        self.counts.n()
    }

    pub fn j(&self) -> usize {
        self.counts.j()
    }
}

/// Dirichlet concentration `exp(x'β)`, clamped to `[GAMMA_MIN, GAMMA_MAX]`.
pub fn gamma_link(x_row: ArrayView1<'_, f64>, beta_row: ArrayView1<'_, f64>) -> f64 {
    gamma_from_linear(x_row.dot(&beta_row))
}

#[inline]
pub fn gamma_from_linear(lin: f64) -> f64 {
    lin.exp().clamp(GAMMA_MIN, GAMMA_MAX)
}

/// At-risk probability `logistic(x'β)`, kept strictly inside (0, 1).
pub fn theta_link(x_row: ArrayView1<'_, f64>, beta_row: ArrayView1<'_, f64>) -> f64 {
    theta_from_linear(x_row.dot(&beta_row))
}

#[inline]
pub fn theta_from_linear(lin: f64) -> f64 {
    let p = if lin >= 0.0 {
        1.0 / (1.0 + (-lin).exp())
    } else {
        let e = lin.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// The latent quantities of one MCMC iteration.
///
/// `c[[i, j]]` is exactly zero iff `eta[[i, j]]` is false. The remaining
/// fields (`row_total`, `active`, `lin_gamma`, `lin_theta`) are caches kept
/// in sync by the sampler kernels; call [`ModelState::recompute_caches`]
/// after editing the public fields directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub c: Array2<f64>,
    pub u: Array1<f64>,
    pub eta: Array2<bool>,
    pub omega: Array2<f64>,
    pub beta_gamma: Array2<f64>,
    pub varphi: Array2<bool>,
    pub beta_theta: Array2<f64>,
    pub zeta: Array2<bool>,
    pub(crate) row_total: Vec<f64>,
    pub(crate) active: Vec<usize>,
    pub(crate) lin_gamma: Array2<f64>,
    pub(crate) lin_theta: Array2<f64>,
}

impl ModelState {
    /// Starting state.
    ///
    /// Intercepts are drawn from N(0, 1) (all `beta_gamma` intercepts, then
    /// all `beta_theta` intercepts), other coefficients start at zero and
    /// unforced indicators at 0. Zero cells start at-risk with probability
    /// 1/2 (always at-risk under [`ModelKind::Dm`]); `c = eta * max(z, 0.5)`,
    /// `omega = 1`, and `u_i ~ Gamma(ż_i, T_i)`.
    pub fn initialize<R: Rng + ?Sized>(model: &Model<'_>, rng: &mut R) -> Result<Self> {
        let (n, j) = (model.n(), model.j());
        let (pg, pt) = (model.x_gamma.p(), model.x_theta.p());
        let mut beta_gamma = Array2::zeros((j, pg));
        let mut beta_theta = Array2::zeros((j, pt));
        for k in 0..j {
            beta_gamma[[k, 0]] = sample_normal(0.0, 1.0, rng);
        }
        for k in 0..j {
            beta_theta[[k, 0]] = sample_normal(0.0, 1.0, rng);
        }
        let varphi = model.mask.forced_gamma.clone();
        let zeta = model.mask.forced_theta.clone();

        let mut eta = Array2::from_elem((n, j), true);
        let mut c = Array2::zeros((n, j));
        for i in 0..n {
            for k in 0..j {
                let z = model.counts.get(i, k);
                if z == 0 && model.kind.zero_inflated() {
                    eta[[i, k]] = rng.random_bool(0.5);
                }
                if eta[[i, k]] {
                    c[[i, k]] = (z as f64).max(0.5);
                }
            }
        }
        let mut u = Array1::zeros(n);
        for i in 0..n {
            let total: f64 = c.row(i).sum();
            u[i] = sample_gamma(model.counts.row_total(i) as f64, total, rng)?;
        }

        let mut state = ModelState {
            c,
            u,
            eta,
            omega: Array2::ones((n, j)),
            beta_gamma,
            varphi,
            beta_theta,
            zeta,
            row_total: Vec::new(),
            active: Vec::new(),
            lin_gamma: Array2::zeros((n, j)),
            lin_theta: Array2::zeros((n, j)),
        };
        state.recompute_caches(model);
        state.validate(model)?;
        Ok(state)
    }

    /// Rebuilds every cache from the public fields.
    pub fn recompute_caches(&mut self, model: &Model<'_>) {
        self.row_total = self.c.rows().into_iter().map(|r| r.sum()).collect();
        self.active = self.eta.rows().into_iter().map(|r| r.iter().filter(|&&e| e).count()).collect();
        self.lin_gamma = model.x_gamma.x().dot(&self.beta_gamma.t());
        self.lin_theta = model.x_theta.x().dot(&self.beta_theta.t());
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn j(&self) -> usize {
        self.c.ncols()
    }

    /// `T_i = Σ_j c_ij` as tracked by the sampler.
    pub fn row_total(&self, i: usize) -> f64 {
        self.row_total[i]
    }

    /// `γ_ij` under the current coefficients.
    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        gamma_from_linear(self.lin_gamma[[i, j]])
    }

    /// `θ_ij` under the current coefficients.
    pub fn theta(&self, i: usize, j: usize) -> f64 {
        theta_from_linear(self.lin_theta[[i, j]])
    }

    pub fn linear_theta(&self, i: usize, j: usize) -> f64 {
        self.lin_theta[[i, j]]
    }

    /// Individual-level composition `ψ_ij = c_ij / T_i`.
    pub fn psi(&self) -> Array2<f64> {
        let mut psi = self.c.clone();
        for (mut row, total) in psi.axis_iter_mut(Axis(0)).zip(self.c.rows()) {
            let t = total.sum();
            row.mapv_inplace(|v| v / t);
        }
        psi
    }

    /// Checks every structural invariant and the consistency of the caches.
    pub fn validate(&self, model: &Model<'_>) -> Result<()> {
        let fail = |msg: String| Err(ZidmError::Invariant(msg));
        let (n, j) = (model.n(), model.j());
        if self.c.dim() != (n, j) || self.eta.dim() != (n, j) || self.u.len() != n {
            return fail("state dimensions do not match the data".into());
        }
        for i in 0..n {
            let mut total = 0.0;
            let mut active = 0;
            for k in 0..j {
                let (c, eta) = (self.c[[i, k]], self.eta[[i, k]]);
                if model.counts.get(i, k) > 0 && !eta {
                    return fail(format!("cell ({i},{k}) has a positive count but is a structural zero"));
                }
                if eta != (c > 0.0) {
                    return fail(format!("cell ({i},{k}) has eta={eta} but c={c}"));
                }
                if !c.is_finite() {
                    return fail(format!("cell ({i},{k}) has non-finite c={c}"));
                }
                total += c;
                active += eta as usize;
            }
            if total <= 0.0 {
                return fail(format!("row {i} has no active component"));
            }
            if (self.row_total[i] - total).abs() > 1e-9 * total.max(1.0) {
                return fail(format!("row {i} total cache {} != {total}", self.row_total[i]));
            }
            if self.active[i] != active {
                return fail(format!("row {i} active count cache is stale"));
            }
            if !(self.u[i] > 0.0 && self.u[i].is_finite()) {
                return fail(format!("u[{i}] = {} is not positive", self.u[i]));
            }
        }
        for ((beta, ind), forced) in self.beta_gamma.iter().zip(&self.varphi).zip(model.mask.forced_gamma()) {
            if !ind && *beta != 0.0 {
                return fail("an excluded beta_gamma coefficient is non-zero".into());
            }
            if *forced && !ind {
                return fail("a forced varphi indicator is 0".into());
            }
        }
        for ((beta, ind), forced) in self.beta_theta.iter().zip(&self.zeta).zip(model.mask.forced_theta()) {
            if !ind && *beta != 0.0 {
                return fail("an excluded beta_theta coefficient is non-zero".into());
            }
            if *forced && !ind {
                return fail("a forced zeta indicator is 0".into());
            }
        }
        let lin_gamma = model.x_gamma.x().dot(&self.beta_gamma.t());
        let lin_theta = model.x_theta.x().dot(&self.beta_theta.t());
        let stale = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-8 * (1.0 + y.abs()));
        if stale(&lin_gamma, &self.lin_gamma) || stale(&lin_theta, &self.lin_theta) {
            return fail("linear predictor cache is stale".into());
        }
        Ok(())
    }
}

/// Run settings recorded alongside the kept samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub n: usize,
    pub j: usize,
    pub p_gamma: usize,
    pub p_theta: usize,
    pub kind: ModelKind,
    /// Set when the run was interrupted before completing every iteration.
    pub truncated: bool,
}

impl TraceMeta {
    /// Kept samples per chain for a completed run.
    pub fn samples_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One kept MCMC state. Blocks not selected for monitoring are `None`;
/// the at-risk level is `None` for the plain DM model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub chain: usize,
    pub iteration: usize,
    pub beta_gamma: Array2<f64>,
    pub varphi: Array2<bool>,
    pub beta_theta: Option<Array2<f64>>,
    pub zeta: Option<Array2<bool>>,
    pub psi: Option<Array2<f64>>,
    pub eta: Option<Array2<bool>>,
    pub c: Option<Array2<f64>>,
    pub u: Option<Array1<f64>>,
    pub omega: Option<Array2<f64>>,
}

/// Thinned post-burn-in samples of every chain, chain-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub samples: Vec<Sample>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
