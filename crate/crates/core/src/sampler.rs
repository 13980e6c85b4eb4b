//! Metropolis-Hastings-within-Gibbs sampler.
//!
//! One iteration visits the rows in order. For row `i` it draws `u_i`, then
//! for each component `j`: the Pólya-Gamma auxiliary `ω_ij`, the joint
//! Expand/Contract move on `(η_ij, c_ij)` (zero cells only), and the Gibbs
//! draw of an active `c_ij`. The coefficient blocks follow: between/within
//! moves for `(β_γ, φ)` and then for `(β_θ, ζ)`. The plain DM model skips
//! every zero-inflation kernel.
//!
//! Two refreshes keep the scheme exact where a move integrates out an
//! auxiliary variable that a later conditional draw depends on:
//!
//! * The Expand/Contract ratio uses the multinomial likelihood with `u_i`
//!   integrated out, so an accepted move redraws `u_i | c_i` before the
//!   `c_ij` update that conditions on it.
//! * The `ζ` between step uses the Bernoulli likelihood with `ω` integrated
//!   out, so an accepted toggle redraws `ω_{·j} | β_θj` before the Gibbs
//!   draw of `β_θj`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{log_sigmoid, sample_gamma, sample_normal, sample_polya_gamma_1, RngStream};
use crate::error::{Result, ZidmError};
use crate::model::{gamma_from_linear, Model, ModelState, Sample, Trace, TraceMeta};

/// Target acceptance rate of the optional burn-in step-size adaptation.
pub const RW_TARGET_ACCEPTANCE: f64 = 0.44;

/// Which per-cell latent blocks are stored in the trace. Coefficients and
/// inclusion indicators are always stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Monitor {
    pub psi: bool,
    pub eta: bool,
    pub c: bool,
    pub u: bool,
    pub omega: bool,
}

impl Default for Monitor {
    fn default() -> Self {
        Monitor { psi: true, eta: false, c: false, u: false, omega: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub monitor: Monitor,
    /// Validate every state invariant after each kernel.
    pub debug_validate: bool,
    /// Robbins-Monro tuning of the `β_γ` random-walk scale during burn-in.
    pub adapt_rw: bool,
    /// Setting these to false holds the corresponding coefficients at
    /// their initial values.
    pub update_beta_gamma: bool,
    pub update_beta_theta: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig::new(20_000, 0)
    }
}

impl McmcConfig {
    /// `iterations` with half discarded as burn-in and every 10th kept.
    pub fn new(iterations: usize, seed: u64) -> Self {
        McmcConfig {
            iterations,
            burn_in: iterations / 2,
            thin: 10,
            seed,
            chains: 1,
            monitor: Monitor::default(),
            debug_validate: false,
            adapt_rw: false,
            update_beta_gamma: true,
            update_beta_theta: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(ZidmError::Config(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(ZidmError::Config("thin must be at least 1".into()));
        }
        if !(self.iterations - self.burn_in).is_multiple_of(self.thin) {
            return Err(ZidmError::Config(format!(
                "iterations after burn-in ({}) must be divisible by thin ({})",
                self.iterations - self.burn_in,
                self.thin
            )));
        }
        if self.chains == 0 {
            return Err(ZidmError::Config("chains must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub attempts: u64,
    pub accepts: u64,
}

impl Counter {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += accepted as u64;
    }

    fn merge(&mut self, other: &Counter) {
        self.attempts += other.attempts;
        self.accepts += other.accepts;
    }
}

/// Acceptance counts per kernel and wall-clock time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub expand: Counter,
    pub contract: Counter,
    pub gamma_add: Counter,
    pub gamma_delete: Counter,
    pub gamma_within: Counter,
    pub theta_add: Counter,
    pub theta_delete: Counter,
    pub iterations: u64,
    pub seconds: f64,
}

impl KernelDiagnostics {
    pub fn merge(&mut self, other: &KernelDiagnostics) {
        self.expand.merge(&other.expand);
        self.contract.merge(&other.contract);
        self.gamma_add.merge(&other.gamma_add);
        self.gamma_delete.merge(&other.gamma_delete);
        self.gamma_within.merge(&other.gamma_within);
        self.theta_add.merge(&other.theta_add);
        self.theta_delete.merge(&other.theta_delete);
        self.iterations += other.iterations;
        self.seconds += other.seconds;
    }

    pub fn seconds_per_iteration(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.seconds / self.iterations as f64
        }
    }
}

/// Per-coefficient log-multipliers of `rw_step_gamma`.
#[derive(Debug, Clone)]
pub struct RwTuning {
    log_scale: Array2<f64>,
    adapting: bool,
    updates: u64,
}

impl RwTuning {
    pub fn new(j: usize, p: usize) -> Self {
        RwTuning { log_scale: Array2::zeros((j, p)), adapting: false, updates: 0 }
    }

    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    pub fn scale(&self, j: usize, p: usize) -> f64 {
        self.log_scale[[j, p]].exp()
    }

    fn adapt(&mut self, j: usize, p: usize, accepted: bool) {
        if self.adapting {
            let gain = 1.0 / ((self.updates / self.log_scale.len() as u64 + 1) as f64).powf(0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - RW_TARGET_ACCEPTANCE;
            self.log_scale[[j, p]] = (self.log_scale[[j, p]] + gain * signal).clamp(-7.0, 4.0);
            self.updates += 1;
        }
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Log acceptance ratio for removing an at-risk zero cell with latent value
/// `c` from a row with total `total`, count total `zdot` and at-risk
/// log-odds `log_odds`:
/// `ż ln(T / (T − c)) + ln((1 − θ)/θ)`.
pub fn contract_log_ratio(total: f64, c: f64, zdot: f64, log_odds: f64) -> f64 {
    -zdot * (-c / total).ln_1p() - log_odds
}

/// Log acceptance ratio for adding a cell with proposed latent value
/// `c_new`: `ż ln(T / (T + c')) + ln(θ/(1 − θ))`.
pub fn expand_log_ratio(total: f64, c_new: f64, zdot: f64, log_odds: f64) -> f64 {
    -zdot * (c_new / total).ln_1p() + log_odds
}

fn refresh_row_total(state: &mut ModelState, i: usize) {
    state.row_total[i] = state.c.row(i).sum();
}

fn draw_u<R: Rng + ?Sized>(state: &mut ModelState, model: &Model<'_>, i: usize, rng: &mut R) -> Result<()> {
    let total = state.row_total[i];
    // Written to also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(total > 0.0) {
        return Err(ZidmError::Invariant(format!("row {i} has total {total}")));
    }
    state.u[i] = sample_gamma(model.counts.row_total(i) as f64, total, rng)?;
    Ok(())
}

fn draw_omega<R: Rng + ?Sized>(state: &mut ModelState, i: usize, j: usize, rng: &mut R) -> Result<()> {
    state.omega[[i, j]] = sample_polya_gamma_1(state.lin_theta[[i, j]], rng)?;
    Ok(())
}

fn draw_c<R: Rng + ?Sized>(state: &mut ModelState, model: &Model<'_>, i: usize, j: usize, rng: &mut R) -> Result<()> {
    if !state.eta[[i, j]] {
        return Ok(());
    }
    let shape = model.counts.get(i, j) as f64 + state.gamma(i, j);
    let new = sample_gamma(shape, 1.0 + state.u[i], rng)?;
    state.row_total[i] += new - state.c[[i, j]];
    state.c[[i, j]] = new;
    Ok(())
}

/// Expand/Contract move for one cell. Returns whether the state changed.
fn expand_contract_cell<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model<'_>,
    i: usize,
    j: usize,
    rng: &mut R,
    diag: &mut KernelDiagnostics,
) -> Result<bool> {
    if model.counts.get(i, j) > 0 {
        return Ok(false);
    }
    let zdot = model.counts.row_total(i) as f64;
    let total = state.row_total[i];
    let log_odds = state.lin_theta[[i, j]];

    if state.eta[[i, j]] {
        if state.active[i] <= 1 {
            diag.contract.record(false);
            return Ok(false);
        }
        let c = state.c[[i, j]];
        let accepted = accept(contract_log_ratio(total, c, zdot, log_odds), rng);
        diag.contract.record(accepted);
        if accepted {
            state.eta[[i, j]] = false;
            state.c[[i, j]] = 0.0;
            state.active[i] -= 1;
            let rest = total - c;
            if rest > 1e-9 * total {
                state.row_total[i] = rest;
            } else {
                refresh_row_total(state, i);
            }
        }
        Ok(accepted)
    } else {
        let c_new = sample_gamma(state.gamma(i, j), 1.0, rng)?;
        let accepted = accept(expand_log_ratio(total, c_new, zdot, log_odds), rng);
        diag.expand.record(accepted);
        if accepted {
            state.eta[[i, j]] = true;
            state.c[[i, j]] = c_new;
            state.active[i] += 1;
            state.row_total[i] = total + c_new;
        }
        Ok(accepted)
    }
}

/// Redraws every `u_i ~ Gamma(ż_i, T_i)`.
pub fn update_u<R: Rng + ?Sized>(state: &mut ModelState, model: &Model<'_>, rng: &mut R) -> Result<()> {
    for i in 0..state.n() {
        refresh_row_total(state, i);
        draw_u(state, model, i, rng)?;
    }
    Ok(())
}

/// Redraws every `ω_ij ~ PG(1, x_i'β_θj)`, including cells whose at-risk
/// indicator is pinned by a positive count.
pub fn update_omega<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<()> {
    for i in 0..state.n() {
        for j in 0..state.j() {
            draw_omega(state, i, j, rng)?;
        }
    }
    Ok(())
}

/// Expand/Contract sweep over all zero cells, row-major. An accepted move
/// is followed by a redraw of that row's `u_i`.
pub fn expand_contract<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model<'_>,
    rng: &mut R,
) -> Result<KernelDiagnostics> {
    let mut diag = KernelDiagnostics::default();
    for i in 0..state.n() {
        refresh_row_total(state, i);
        for j in 0..state.j() {
            if expand_contract_cell(state, model, i, j, rng, &mut diag)? {
                draw_u(state, model, i, rng)?;
            }
        }
    }
    Ok(diag)
}

/// Gibbs update `c_ij ~ Gamma(z_ij + γ_ij, 1 + u_i)` for every at-risk cell.
pub fn update_c<R: Rng + ?Sized>(state: &mut ModelState, model: &Model<'_>, rng: &mut R) -> Result<()> {
    for i in 0..state.n() {
        for j in 0..state.j() {
            draw_c(state, model, i, j, rng)?;
        }
        refresh_row_total(state, i);
    }
    Ok(())
}

/// `ln Gamma(c; γ, 1)` up to the `-c` term, which cancels in every ratio
/// over `γ`.
#[inline]
fn gamma_shape_loglik(ln_c: f64, lin: f64) -> f64 {
    let g = gamma_from_linear(lin);
    (g - 1.0) * ln_c - ln_gamma(g)
}

fn linear_predictor_column(x: &Array2<f64>, beta: &Array2<f64>, active: &Array2<bool>, j: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(x.nrows(), 0.0);
    for p in 0..beta.ncols() {
        if active[[j, p]] {
            let b = beta[[j, p]];
            for (o, xi) in out.iter_mut().zip(x.column(p)) {
                *o += xi * b;
            }
        }
    }
}

/// Between and within moves for `(β_γ, φ)`, component by component.
///
/// Between: each unforced coefficient toggles its indicator, drawing an
/// added coefficient from its N(0, σ²) prior so that prior and proposal
/// cancel; the ratio is the Gamma likelihood of the at-risk `c_·j` times
/// `a/b` (add) or `b/a` (delete). Within: Gaussian random walk on every
/// active coefficient.
pub fn update_beta_gamma<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model<'_>,
    mut tuning: Option<&mut RwTuning>,
    rng: &mut R,
) -> Result<KernelDiagnostics> {
    let mut diag = KernelDiagnostics::default();
    let hyper = model.hyper;
    let x = model.x_gamma.x();
    let (n, p_count) = x.dim();
    let prior_var = hyper.sigma2_beta_gamma;
    let prior_sd = prior_var.sqrt();
    let log_add = (hyper.a_varphi / hyper.b_varphi).ln();
    let forced = model.mask.forced_gamma();

    let mut lin = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut ln_c = Vec::with_capacity(n);
    let mut current = Vec::with_capacity(n);
    let mut proposed = Vec::with_capacity(n);

    for j in 0..state.j() {
        linear_predictor_column(x, &state.beta_gamma, &state.varphi, j, &mut lin);
        rows.clear();
        ln_c.clear();
        for i in 0..n {
            if state.eta[[i, j]] {
                rows.push(i);
                ln_c.push(state.c[[i, j]].ln());
            }
        }
        current.clear();
        current.extend(rows.iter().zip(&ln_c).map(|(&i, &lc)| gamma_shape_loglik(lc, lin[i])));

        // Log-likelihood change from shifting coefficient p by delta.
        let evaluate = |p: usize, delta: f64, lin: &[f64], current: &[f64], proposed: &mut Vec<f64>| {
            proposed.clear();
            let mut diff = 0.0;
            for (k, &i) in rows.iter().enumerate() {
                let ll = gamma_shape_loglik(ln_c[k], lin[i] + x[[i, p]] * delta);
                diff += ll - current[k];
                proposed.push(ll);
            }
            diff
        };

        if model.mask.selection_enabled() {
            for p in 0..p_count {
                if forced[[j, p]] {
                    continue;
                }
                let adding = !state.varphi[[j, p]];
                let delta = if adding { sample_normal(0.0, prior_sd, rng) } else { -state.beta_gamma[[j, p]] };
                let diff = evaluate(p, delta, &lin, &current, &mut proposed);
                let log_ratio = diff + if adding { log_add } else { -log_add };
                let accepted = accept(log_ratio, rng);
                if adding {
                    diag.gamma_add.record(accepted);
                } else {
                    diag.gamma_delete.record(accepted);
                }
                if accepted {
                    state.varphi[[j, p]] = adding;
                    state.beta_gamma[[j, p]] = if adding { delta } else { 0.0 };
                    for (i, l) in lin.iter_mut().enumerate() {
                        *l += x[[i, p]] * delta;
                    }
                    std::mem::swap(&mut current, &mut proposed);
                }
            }
        }

        for p in 0..p_count {
            if !state.varphi[[j, p]] {
                continue;
            }
            let scale = tuning.as_ref().map_or(1.0, |t| t.scale(j, p));
            let old = state.beta_gamma[[j, p]];
            let new = old + sample_normal(0.0, hyper.rw_step_gamma * scale, rng);
            let delta = new - old;
            let diff = evaluate(p, delta, &lin, &current, &mut proposed);
            let log_ratio = diff - (new * new - old * old) / (2.0 * prior_var);
            let accepted = accept(log_ratio, rng);
            diag.gamma_within.record(accepted);
            if let Some(t) = tuning.as_deref_mut() {
                t.adapt(j, p, accepted);
            }
            if accepted {
                state.beta_gamma[[j, p]] = new;
                for (i, l) in lin.iter_mut().enumerate() {
                    *l += x[[i, p]] * delta;
                }
                std::mem::swap(&mut current, &mut proposed);
            }
        }

        linear_predictor_column(x, &state.beta_gamma, &state.varphi, j, &mut lin);
        for (i, l) in lin.iter().enumerate() {
            state.lin_gamma[[i, j]] = *l;
        }
    }
    Ok(diag)
}

#[inline]
fn bernoulli_loglik(eta: bool, lin: f64) -> f64 {
    if eta {
        log_sigmoid(lin)
    } else {
        log_sigmoid(-lin)
    }
}

/// Between and within moves for `(β_θ, ζ)`, component by component.
///
/// Between: as for `β_γ`, with the Bernoulli likelihood of `η_·j` under
/// `θ_·j`. Within: exact Gibbs draw of the active coefficients from the
/// Pólya-Gamma augmented Gaussian conditional with precision
/// `X_A'Ω_j X_A + I/σ²` and mean `precision⁻¹ X_A'κ_j`, `κ = η − 1/2`.
pub fn update_beta_theta<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model<'_>,
    rng: &mut R,
) -> Result<KernelDiagnostics> {
    let mut diag = KernelDiagnostics::default();
    let hyper = model.hyper;
    let x = model.x_theta.x();
    let (n, p_count) = x.dim();
    let prior_var = hyper.sigma2_beta_theta;
    let prior_sd = prior_var.sqrt();
    let log_add = (hyper.a_zeta / hyper.b_zeta).ln();
    let forced = model.mask.forced_theta();

    let mut lin = Vec::with_capacity(n);
    let mut current = Vec::with_capacity(n);
    let mut proposed = Vec::with_capacity(n);
    let mut active = Vec::with_capacity(p_count);

    for j in 0..state.j() {
        linear_predictor_column(x, &state.beta_theta, &state.zeta, j, &mut lin);
        current.clear();
        current.extend((0..n).map(|i| bernoulli_loglik(state.eta[[i, j]], lin[i])));

        let mut moved = false;
        if model.mask.selection_enabled() {
            for p in 0..p_count {
                if forced[[j, p]] {
                    continue;
                }
                let adding = !state.zeta[[j, p]];
                let delta = if adding { sample_normal(0.0, prior_sd, rng) } else { -state.beta_theta[[j, p]] };
                proposed.clear();
                let mut diff = 0.0;
                for i in 0..n {
                    let ll = bernoulli_loglik(state.eta[[i, j]], lin[i] + x[[i, p]] * delta);
                    diff += ll - current[i];
                    proposed.push(ll);
                }
                let accepted = accept(diff + if adding { log_add } else { -log_add }, rng);
                if adding {
                    diag.theta_add.record(accepted);
                } else {
                    diag.theta_delete.record(accepted);
                }
                if accepted {
                    moved = true;
                    state.zeta[[j, p]] = adding;
                    state.beta_theta[[j, p]] = if adding { delta } else { 0.0 };
                    for (i, l) in lin.iter_mut().enumerate() {
                        *l += x[[i, p]] * delta;
                    }
                    std::mem::swap(&mut current, &mut proposed);
                }
            }
        }
        if moved {
            for (i, &l) in lin.iter().enumerate() {
                state.lin_theta[[i, j]] = l;
                state.omega[[i, j]] = sample_polya_gamma_1(l, rng)?;
            }
        }

        active.clear();
        active.extend((0..p_count).filter(|&p| state.zeta[[j, p]]));
        if !active.is_empty() {
            let k = active.len();
            let mut precision = DMatrix::<f64>::zeros(k, k);
            let mut rhs = DVector::<f64>::zeros(k);
            for i in 0..n {
                let w = state.omega[[i, j]];
                let kappa = if state.eta[[i, j]] { 0.5 } else { -0.5 };
                for (a, &pa) in active.iter().enumerate() {
                    let xa = x[[i, pa]];
                    rhs[a] += xa * kappa;
                    for (b, &pb) in active.iter().enumerate().take(a + 1) {
                        precision[(a, b)] += w * xa * x[[i, pb]];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    precision[(b, a)] = precision[(a, b)];
                }
                precision[(a, a)] += 1.0 / prior_var;
            }
            let chol = precision.cholesky().ok_or_else(|| {
                ZidmError::Numerical(format!("beta_theta precision for component {j} is not positive definite"))
            })?;
            let mean = chol.solve(&rhs);
            let noise = DVector::from_fn(k, |_, _| sample_normal(0.0, 1.0, rng));
            let offset = chol
                .l()
                .tr_solve_lower_triangular(&noise)
                .ok_or_else(|| ZidmError::Numerical("triangular solve failed".into()))?;
            for (a, &p) in active.iter().enumerate() {
                state.beta_theta[[j, p]] = mean[a] + offset[a];
            }
        }

        linear_predictor_column(x, &state.beta_theta, &state.zeta, j, &mut lin);
        for (i, l) in lin.iter().enumerate() {
            state.lin_theta[[i, j]] = *l;
        }
    }
    Ok(diag)
}

/// Options for a single [`sweep`].
#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub update_beta_gamma: bool,
    pub update_beta_theta: bool,
    pub validate: bool,
}

impl From<&McmcConfig> for SweepOptions {
    fn from(cfg: &McmcConfig) -> Self {
        SweepOptions {
            update_beta_gamma: cfg.update_beta_gamma,
            update_beta_theta: cfg.update_beta_theta,
            validate: cfg.debug_validate,
        }
    }
}

/// One full iteration in the fixed kernel order.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    model: &Model<'_>,
    opts: SweepOptions,
    tuning: Option<&mut RwTuning>,
    rng: &mut R,
    diag: &mut KernelDiagnostics,
) -> Result<()> {
    let zero_inflated = model.kind.zero_inflated();
    for i in 0..state.n() {
        refresh_row_total(state, i);
        draw_u(state, model, i, rng)?;
        for j in 0..state.j() {
            if zero_inflated {
                draw_omega(state, i, j, rng)?;
                if expand_contract_cell(state, model, i, j, rng, diag)? {
                    draw_u(state, model, i, rng)?;
                }
            }
            draw_c(state, model, i, j, rng)?;
        }
        refresh_row_total(state, i);
    }
    if opts.validate {
        state.validate(model)?;
    }
    if opts.update_beta_gamma {
        diag.merge(&update_beta_gamma(state, model, tuning, rng)?);
        if opts.validate {
            state.validate(model)?;
        }
    }
    if zero_inflated && opts.update_beta_theta {
        diag.merge(&update_beta_theta(state, model, rng)?);
        if opts.validate {
            state.validate(model)?;
        }
    }
    diag.iterations += 1;
    Ok(())
}

fn snapshot(state: &ModelState, model: &Model<'_>, cfg: &McmcConfig, chain: usize, iteration: usize) -> Sample {
    let zi = model.kind.zero_inflated();
    let m = cfg.monitor;
    Sample {
        chain,
        iteration,
        beta_gamma: state.beta_gamma.clone(),
        varphi: state.varphi.clone(),
        beta_theta: zi.then(|| state.beta_theta.clone()),
        zeta: zi.then(|| state.zeta.clone()),
        psi: m.psi.then(|| state.psi()),
        eta: m.eta.then(|| state.eta.clone()),
        c: m.c.then(|| state.c.clone()),
        u: m.u.then(|| state.u.clone()),
        omega: (m.omega && zi).then(|| state.omega.clone()),
    }
}

pub struct McmcOutput {
    pub trace: Trace,
    pub diagnostics: KernelDiagnostics,
}

type Initializer<'f> = dyn Fn(&Model<'_>, &mut RngStream) -> Result<ModelState> + Sync + 'f;

/// Runs `cfg.chains` chains (in parallel when cores allow). Chain `k` uses
/// stream `k` of `cfg.seed`; output is merged in chain order, so results
/// do not depend on scheduling.
pub struct Mcmc<'m, 'a> {
    model: &'m Model<'a>,
    cfg: &'m McmcConfig,
    init: Option<&'m Initializer<'m>>,
    cancel: Option<&'m AtomicBool>,
}

impl<'m, 'a> Mcmc<'m, 'a> {
    pub fn new(model: &'m Model<'a>, cfg: &'m McmcConfig) -> Self {
        Mcmc { model, cfg, init: None, cancel: None }
    }

    /// Replaces [`ModelState::initialize`] as the source of starting states.
    pub fn with_initializer(mut self, init: &'m Initializer<'m>) -> Self {
        self.init = Some(init);
        self
    }

    /// When the flag is raised, chains stop at the next iteration boundary
    /// and the partial trace is returned with `meta.truncated` set.
    pub fn with_cancel(mut self, flag: &'m AtomicBool) -> Self {
        self.cancel = Some(flag);
        self
    }

    pub fn run(self) -> Result<McmcOutput> {
        self.cfg.validate()?;
        let results: Vec<Result<(Vec<Sample>, KernelDiagnostics, bool)>> =
            (0..self.cfg.chains).into_par_iter().map(|chain| self.run_chain(chain)).collect();

        let mut samples = Vec::new();
        let mut diagnostics = KernelDiagnostics::default();
        let mut truncated = false;
        for r in results {
            let (s, d, t) = r?;
            samples.extend(s);
            diagnostics.merge(&d);
            truncated |= t;
        }
        let model = self.model;
        let meta = TraceMeta {
            iterations: self.cfg.iterations,
            burn_in: self.cfg.burn_in,
            thin: self.cfg.thin,
            seed: self.cfg.seed,
            chains: self.cfg.chains,
            n: model.n(),
            j: model.j(),
            p_gamma: model.x_gamma.p(),
            p_theta: model.x_theta.p(),
            kind: model.kind,
            truncated,
        };
        Ok(McmcOutput { trace: Trace { meta, samples }, diagnostics })
    }

    fn run_chain(&self, chain: usize) -> Result<(Vec<Sample>, KernelDiagnostics, bool)> {
        let cfg = self.cfg;
        let model = self.model;
        let mut rng = RngStream::new(cfg.seed, chain as u64);
        let mut state = match self.init {
            Some(f) => f(model, &mut rng)?,
            None => ModelState::initialize(model, &mut rng)?,
        };
        state.recompute_caches(model);
        state.validate(model)?;

        let opts = SweepOptions::from(cfg);
        let mut tuning = RwTuning::new(model.j(), model.x_gamma.p());
        let mut diag = KernelDiagnostics::default();
        let mut samples = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin);
        let start = Instant::now();
        let mut truncated = false;

        for iteration in 1..=cfg.iterations {
            if self.cancel.is_some_and(|f| f.load(Ordering::Relaxed)) {
                truncated = true;
                break;
            }
            tuning.set_adapting(cfg.adapt_rw && iteration <= cfg.burn_in);
            sweep(&mut state, model, opts, Some(&mut tuning), &mut rng, &mut diag)?;
            if iteration > cfg.burn_in && (iteration - cfg.burn_in).is_multiple_of(cfg.thin) {
                samples.push(snapshot(&state, model, cfg, chain, iteration));
            }
        }
        diag.seconds = start.elapsed().as_secs_f64();
        log::debug!(
            "chain {chain}: {} iterations in {:.2}s (expand {:.3}, contract {:.3}, within-gamma {:.3})",
            diag.iterations,
            diag.seconds,
            diag.expand.rate(),
            diag.contract.rate(),
            diag.gamma_within.rate()
        );
        Ok((samples, diag, truncated))
    }
}

/// Runs the sampler from default starting states.
pub fn run_mcmc(model: &Model<'_>, cfg: &McmcConfig) -> Result<McmcOutput> {
    Mcmc::new(model, cfg).run()
}
