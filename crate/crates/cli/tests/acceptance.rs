//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Runs as part of `cargo test`. Pass criterion numbers or name fragments
//! to run a subset: `cargo test -p zidm-cli --test acceptance -- 3 geweke`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::{array, s, Array1, Array2};
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use zidm::distributions::{sample_gamma, sample_multinomial, sample_normal, sample_polya_gamma_1, RngStream};
use zidm::inference::effective_sample_size;
use zidm::model::{CountMatrix, DesignMatrix, Hyperparameters, Model, ModelKind, ModelState, SelectionMask};
use zidm::sampler::{contract_log_ratio, expand_log_ratio, run_mcmc, sweep, KernelDiagnostics, McmcConfig, SweepOptions};
use zidm::simulation::{
    gen_scenario, metric_abs, metric_cov, metric_frob, metric_simp, run_replicate_study, selection_metrics, ScenarioSpec,
    StudyOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Adaptive Simpson on [a, b], started from 64 panels so narrow features
/// are not skipped.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, whole: f64, m: f64, fm: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1) + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(f, lo, flo, hi, fhi);
            recurse(f, lo, flo, hi, fhi, whole, m, fm, tol / panels as f64, 40)
        })
        .sum()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Built-in fixture holding everything a `Model` borrows.
struct Fixture {
    counts: CountMatrix,
    x: DesignMatrix,
    hyper: Hyperparameters,
    mask: SelectionMask,
}

impl Fixture {
    fn model(&self, kind: ModelKind) -> Model<'_> {
        Model::new(&self.counts, &self.x, &self.x, &self.hyper, &self.mask, kind).unwrap()
    }
}

// 1 ---------------------------------------------------------------------

fn conjugate_oracle() -> Outcome {
    let start = Instant::now();
    let z = array![[3u64, 0, 7], [1, 4, 2], [0, 9, 1], [5, 5, 0], [2, 1, 12]];
    let fx = Fixture {
        counts: CountMatrix::new(z.clone()).unwrap(),
        x: DesignMatrix::intercept_only(5),
        hyper: Hyperparameters::default(),
        mask: SelectionMask::new(3, 1, 1, false),
    };
    let model = fx.model(ModelKind::Dm);
    let mut rng = RngStream::new(101, 0);
    let mut state = ModelState::initialize(&model, &mut rng).unwrap();
    // γ = (1, 1, 1) held fixed.
    state.beta_gamma.fill(0.0);
    state.recompute_caches(&model);
    let opts = SweepOptions { update_beta_gamma: false, update_beta_theta: false, validate: false };
    let mut diag = KernelDiagnostics::default();

    let (iterations, burn) = (20_000, 1_000);
    let mut draws: Vec<Vec<f64>> = (0..15).map(|_| Vec::with_capacity(iterations - burn)).collect();
    for t in 0..iterations {
        sweep(&mut state, &model, opts, None, &mut rng, &mut diag).unwrap();
        if t >= burn {
            for (k, v) in state.psi().iter().enumerate() {
                draws[k].push(*v);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let zdot: u64 = z.row(i).sum();
        for j in 0..3 {
            let exact = (z[[i, j]] as f64 + 1.0) / (zdot as f64 + 3.0);
            let d = &draws[i * 3 + j];
            let mcse = (variance(d) / effective_sample_size(d)).sqrt();
            worst = worst.max((mean(d) - exact).abs() / mcse);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 3.0 && secs < 10.0, format!("max |mean - exact| = {worst:.2} MCSE over 15 cells (< 3), {secs:.1} s (< 10)"))
}

// 2 ---------------------------------------------------------------------

fn polya_gamma_moments() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (k, c) in [0.0f64, 0.5, 1.0, 2.5, 5.0].into_iter().enumerate() {
        let mut rng = RngStream::new(202, k as u64);
        let n = 1_000_000;
        let total: f64 = (0..n).map(|_| sample_polya_gamma_1(c, &mut rng).unwrap()).sum();
        let exact = if c == 0.0 { 0.25 } else { (c / 2.0).tanh() / (2.0 * c) };
        worst = worst.max((total / n as f64 / exact - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 0.01 && secs < 30.0, format!("max relative mean error {:.4}% (< 1%), {secs:.1} s (< 30)", 100.0 * worst))
}

// 3 ---------------------------------------------------------------------

const GEWEKE_X: [f64; 4] = [-1.2, -0.3, 0.4, 1.1];
const GEWEKE_TOTALS: [u64; 4] = [3, 5, 4, 6];

/// Every latent and observed quantity of the joint model.
#[derive(Clone)]
struct Joint {
    beta_gamma: Array2<f64>,
    varphi: Array2<bool>,
    beta_theta: Array2<f64>,
    zeta: Array2<bool>,
    eta: Array2<bool>,
    c: Array2<f64>,
    u: Array1<f64>,
    omega: Array2<f64>,
    z: Array2<u64>,
}

fn draw_counts(c: &Array2<f64>, rng: &mut RngStream) -> Array2<u64> {
    let mut z = Array2::zeros(c.dim());
    for (i, row) in c.outer_iter().enumerate() {
        let total = row.sum();
        let probs: Vec<f64> = row.iter().map(|v| v / total).collect();
        let draw = sample_multinomial(GEWEKE_TOTALS[i], &probs, rng).unwrap();
        z.row_mut(i).assign(&Array1::from(draw));
    }
    z
}

/// Direct draw from the prior and the sampling model (intercepts forced,
/// slopes in with probability 1/2, unit prior variances).
fn forward_draw(rng: &mut RngStream) -> Joint {
    let (n, j) = (4, 3);
    let lin = |b: &Array2<f64>, i: usize, k: usize| b[[k, 0]] + b[[k, 1]] * GEWEKE_X[i];
    let coefficients = |rng: &mut RngStream| {
        let mut beta = Array2::zeros((j, 2));
        let mut ind = Array2::from_elem((j, 2), true);
        for k in 0..j {
            beta[[k, 0]] = sample_normal(0.0, 1.0, rng);
            ind[[k, 1]] = rng.random_bool(0.5);
            if ind[[k, 1]] {
                beta[[k, 1]] = sample_normal(0.0, 1.0, rng);
            }
        }
        (beta, ind)
    };
    // Rows must keep an at-risk cell, so (β_θ, η) are drawn jointly by
    // rejection.
    let (beta_theta, zeta, eta) = loop {
        let (bt, zt) = coefficients(rng);
        let eta = Array2::from_shape_fn((n, j), |(i, k)| {
            let p = 1.0 / (1.0 + (-lin(&bt, i, k)).exp());
            rng.random_bool(p)
        });
        if eta.outer_iter().all(|r| r.iter().any(|&e| e)) {
            break (bt, zt, eta);
        }
    };
    let (beta_gamma, varphi) = coefficients(rng);
    let c = Array2::from_shape_fn((n, j), |(i, k)| {
        if eta[[i, k]] {
            sample_gamma(lin(&beta_gamma, i, k).exp(), 1.0, rng).unwrap()
        } else {
            0.0
        }
    });
    let u = Array1::from_shape_fn(n, |i| sample_gamma(GEWEKE_TOTALS[i] as f64, c.row(i).sum(), rng).unwrap());
    let omega = Array2::from_shape_fn((n, j), |(i, k)| sample_polya_gamma_1(lin(&beta_theta, i, k), rng).unwrap());
    let z = draw_counts(&c, rng);
    Joint { beta_gamma, varphi, beta_theta, zeta, eta, c, u, omega, z }
}

const GEWEKE_FUNCTIONS: [&str; 19] = [
    "beta_gamma0",
    "beta_gamma0^2",
    "varphi1",
    "beta_gamma1",
    "beta_gamma1^2",
    "beta_theta0",
    "beta_theta0^2",
    "zeta1",
    "beta_theta1",
    "beta_theta1^2",
    "eta",
    "eta*x (comp 0)",
    "c/(1+c)",
    "sum psi^2",
    "u*T/zdot",
    "u/(1+u)",
    "omega",
    "z*x (comp 0)",
    "z == 0",
];

fn test_functions(s: &Joint) -> [f64; 19] {
    let col_mean = |a: &Array2<f64>, p: usize, f: &dyn Fn(f64) -> f64| a.column(p).iter().map(|&v| f(v)).sum::<f64>() / 3.0;
    let ind_mean = |a: &Array2<bool>| a.column(1).iter().filter(|&&v| v).count() as f64 / 3.0;
    let id = |v: f64| v;
    let sq = |v: f64| v * v;
    let totals: Vec<f64> = s.c.outer_iter().map(|r| r.sum()).collect();
    let cells = 12.0;
    [
        col_mean(&s.beta_gamma, 0, &id),
        col_mean(&s.beta_gamma, 0, &sq),
        ind_mean(&s.varphi),
        col_mean(&s.beta_gamma, 1, &id),
        col_mean(&s.beta_gamma, 1, &sq),
        col_mean(&s.beta_theta, 0, &id),
        col_mean(&s.beta_theta, 0, &sq),
        ind_mean(&s.zeta),
        col_mean(&s.beta_theta, 1, &id),
        col_mean(&s.beta_theta, 1, &sq),
        s.eta.iter().filter(|&&e| e).count() as f64 / cells,
        (0..4).map(|i| s.eta[[i, 0]] as u8 as f64 * GEWEKE_X[i]).sum::<f64>() / 4.0,
        s.c.iter().map(|c| c / (1.0 + c)).sum::<f64>() / cells,
        s.c.indexed_iter().map(|((i, _), c)| (c / totals[i]).powi(2)).sum::<f64>() / 4.0,
        (0..4).map(|i| s.u[i] * totals[i] / GEWEKE_TOTALS[i] as f64).sum::<f64>() / 4.0,
        s.u.iter().map(|u| u / (1.0 + u)).sum::<f64>() / 4.0,
        s.omega.sum() / cells,
        (0..4).map(|i| s.z[[i, 0]] as f64 * GEWEKE_X[i]).sum::<f64>() / 4.0,
        s.z.iter().filter(|&&v| v == 0).count() as f64 / cells,
    ]
}

/// Standard error of the mean from non-overlapping batch means.
fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks_exact(size).map(mean).collect();
    (variance(&means) / means.len() as f64).sqrt()
}

fn geweke() -> Outcome {
    let start = Instant::now();
    let samples = 100_000;
    let k = GEWEKE_FUNCTIONS.len();

    let mut rng = RngStream::new(303, 0);
    let mut forward = vec![Vec::with_capacity(samples); k];
    for _ in 0..samples {
        for (slot, v) in forward.iter_mut().zip(test_functions(&forward_draw(&mut rng))) {
            slot.push(v);
        }
    }

    let x = Array2::from_shape_fn((4, 2), |(i, p)| if p == 0 { 1.0 } else { GEWEKE_X[i] });
    let design = DesignMatrix::new(x, vec!["intercept".into(), "x".into()]).unwrap();
    let hyper = Hyperparameters { sigma2_beta_gamma: 1.0, sigma2_beta_theta: 1.0, ..Hyperparameters::default() };
    let mask = SelectionMask::new(3, 2, 2, true);
    let opts = SweepOptions { update_beta_gamma: true, update_beta_theta: true, validate: false };
    let mut diag = KernelDiagnostics::default();

    let mut rng = RngStream::new(303, 1);
    let mut joint = forward_draw(&mut rng);
    let counts = CountMatrix::new(joint.z.clone()).unwrap();
    let model = Model::new(&counts, &design, &design, &hyper, &mask, ModelKind::Zidm).unwrap();
    let mut state = ModelState::initialize(&model, &mut rng).unwrap();
    state.beta_gamma = joint.beta_gamma.clone();
    state.varphi = joint.varphi.clone();
    state.beta_theta = joint.beta_theta.clone();
    state.zeta = joint.zeta.clone();
    state.eta = joint.eta.clone();
    state.c = joint.c.clone();
    state.u = joint.u.clone();
    state.omega = joint.omega.clone();
    state.recompute_caches(&model);

    let mut successive = vec![Vec::with_capacity(samples); k];
    for _ in 0..samples {
        let counts = CountMatrix::new(joint.z.clone()).unwrap();
        let model = Model::new(&counts, &design, &design, &hyper, &mask, ModelKind::Zidm).unwrap();
        if let Err(e) = sweep(&mut state, &model, opts, None, &mut rng, &mut diag) {
            return outcome(false, format!("sweep failed: {e}"));
        }
        joint = Joint {
            beta_gamma: state.beta_gamma.clone(),
            varphi: state.varphi.clone(),
            beta_theta: state.beta_theta.clone(),
            zeta: state.zeta.clone(),
            eta: state.eta.clone(),
            c: state.c.clone(),
            u: state.u.clone(),
            omega: state.omega.clone(),
            z: draw_counts(&state.c, &mut rng),
        };
        for (slot, v) in successive.iter_mut().zip(test_functions(&joint)) {
            slot.push(v);
        }
    }

    let mut worst = (0.0f64, "");
    for (f, name) in GEWEKE_FUNCTIONS.iter().enumerate() {
        let se_f = (variance(&forward[f]) / samples as f64).sqrt();
        let se_s = batch_means_se(&successive[f], 200);
        let score = (mean(&forward[f]) - mean(&successive[f])) / (se_f * se_f + se_s * se_s).sqrt();
        if score.abs() > worst.0.abs() {
            worst = (score, name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0.abs() < 4.0 && secs < 300.0,
        format!("{k} test functions, worst |z| = {:.2} ({}) (< 4), {secs:.1} s (< 300)", worst.0.abs(), worst.1),
    )
}

// 4 ---------------------------------------------------------------------

fn ln_multinomial(z: &[u64], c: &[f64]) -> f64 {
    let total: f64 = c.iter().sum();
    let n: u64 = z.iter().sum();
    let mut out = ln_gamma(n as f64 + 1.0);
    for (&k, &ck) in z.iter().zip(c) {
        out -= ln_gamma(k as f64 + 1.0);
        if k > 0 {
            out += k as f64 * (ck / total).ln();
        }
    }
    out
}

fn ln_gamma_density(x: f64, shape: f64) -> f64 {
    (shape - 1.0) * x.ln() - x - ln_gamma(shape)
}

/// Unnormalized log target of one row: multinomial likelihood, gamma
/// priors on at-risk cells and Bernoulli priors on the indicators.
fn ln_row_target(z: &[u64], c: &[f64], gamma: &[f64], theta: &[f64]) -> f64 {
    let mut out = ln_multinomial(z, c);
    for k in 0..c.len() {
        if c[k] > 0.0 {
            out += ln_gamma_density(c[k], gamma[k]) + theta[k].ln();
        } else {
            out += (1.0 - theta[k]).ln();
        }
    }
    out
}

fn expand_contract() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(404, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let j = rng.random_range(2..=6);
        let moved = rng.random_range(0..j);
        let mut z: Vec<u64> = (0..j).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..60) }).collect();
        z[moved] = 0;
        if z.iter().all(|&v| v == 0) {
            z[(moved + 1) % j] = rng.random_range(1..60);
        }
        let c: Vec<f64> = (0..j).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
        let gamma: Vec<f64> = (0..j).map(|_| 10f64.powf(rng.random_range(-1.5..1.0))).collect();
        let lin: Vec<f64> = (0..j).map(|_| rng.random_range(-4.0..4.0)).collect();
        let theta: Vec<f64> = lin.iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect();

        let mut contracted = c.clone();
        contracted[moved] = 0.0;
        let proposal = ln_gamma_density(c[moved], gamma[moved]);
        let general_contract = ln_row_target(&z, &contracted, &gamma, &theta) + proposal - ln_row_target(&z, &c, &gamma, &theta);
        let general_expand = -general_contract;

        let zdot = z.iter().sum::<u64>() as f64;
        let total: f64 = c.iter().sum();
        let reduced_contract = contract_log_ratio(total, c[moved], zdot, lin[moved]);
        let reduced_expand = expand_log_ratio(total - c[moved], c[moved], zdot, lin[moved]);
        for (r, g) in [(reduced_contract, general_contract), (reduced_expand, general_expand)] {
            worst = worst.max((r - g).abs() / g.abs().max(1.0));
        }
    }

    // Toy posterior: one row, z = (5, 0), γ = (2, 1.5), θ = 1/2 held fixed.
    // P(η₂ = 1 | z) = θ m / (θ m + 1 − θ) with m = E[ψ₁⁵], ψ₁ ~ Beta(2, 1.5).
    let (g1, g2, theta) = (2.0f64, 1.5f64, 0.5f64);
    let m_closed = (ln_beta(g1 + 5.0, g2) - ln_beta(g1, g2)).exp();
    let m_quad = integrate(&|p: f64| p.powi(5) * p.powf(g1 - 1.0) * (1.0 - p).powf(g2 - 1.0), 0.0, 1.0, 1e-12) / ln_beta(g1, g2).exp();
    let oracle = theta * m_quad / (theta * m_quad + 1.0 - theta);

    let fx = Fixture {
        counts: CountMatrix::new(array![[5u64, 0]]).unwrap(),
        x: DesignMatrix::intercept_only(1),
        hyper: Hyperparameters::default(),
        mask: SelectionMask::new(2, 1, 1, false),
    };
    let model = fx.model(ModelKind::Zidm);
    let mut rng = RngStream::new(404, 1);
    let mut state = ModelState::initialize(&model, &mut rng).unwrap();
    state.beta_gamma = array![[g1.ln()], [g2.ln()]];
    state.beta_theta.fill(0.0);
    state.recompute_caches(&model);
    let opts = SweepOptions { update_beta_gamma: false, update_beta_theta: false, validate: false };
    let mut diag = KernelDiagnostics::default();
    let (iterations, burn) = (200_000, 1_000);
    let mut at_risk = 0usize;
    for t in 0..iterations {
        sweep(&mut state, &model, opts, None, &mut rng, &mut diag).unwrap();
        if t >= burn {
            at_risk += state.eta[[0, 1]] as usize;
        }
    }
    let estimate = at_risk as f64 / (iterations - burn) as f64;
    let secs = start.elapsed().as_secs_f64();
    let quad_ok = (m_quad - m_closed).abs() < 1e-9;
    outcome(
        worst < 1e-10 && quad_ok && (estimate - oracle).abs() < 0.01 && secs < 60.0,
        format!(
            "max ratio discrepancy {worst:.1e} over 10^4 states (< 1e-10); P(eta=1) MCMC {estimate:.4} vs quadrature {oracle:.4} (closed form agrees to {:.0e}), {secs:.1} s (< 60)",
            (m_quad - m_closed).abs().max(1e-16)
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn scenario1_reduced() -> Outcome {
    let start = Instant::now();
    let spec = ScenarioSpec::preset("scenario1-reduced").unwrap();
    let replicates = 25;
    let table = match run_replicate_study(&spec, replicates, &McmcConfig::new(20_000, 505), &StudyOptions::default()) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    if !table.failures.is_empty() {
        return outcome(false, format!("{} replicate(s) failed: {:?}", table.failures.len(), table.failures));
    }
    let theta: Vec<_> = table.rows_for("ZIDM", "Theta").collect();
    let cov = mean(&theta.iter().map(|r| r.cov.unwrap()).collect::<Vec<_>>());
    let abs = mean(&theta.iter().map(|r| r.abs.unwrap()).collect::<Vec<_>>());
    let zidm_gamma: Vec<_> = table.rows_for("ZIDM", "Gamma").collect();
    let dm_gamma: Vec<_> = table.rows_for("DM", "Gamma").collect();
    let wins = zidm_gamma
        .iter()
        .filter(|z| dm_gamma.iter().any(|d| d.replicate == z.replicate && z.abs.unwrap() < d.abs.unwrap()))
        .count();
    let zg = mean(&zidm_gamma.iter().map(|r| r.abs.unwrap()).collect::<Vec<_>>());
    let dg = mean(&dm_gamma.iter().map(|r| r.abs.unwrap()).collect::<Vec<_>>());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (0.85..=1.0).contains(&cov) && abs <= 0.12 && wins >= 20 && theta.len() == replicates && secs < 7200.0,
        format!(
            "Theta COV {cov:.3} (in [0.85, 1]), ABS {abs:.4} (<= 0.12); Gamma ABS ZIDM < DM in {wins}/{replicates} (>= 20), means {zg:.5} vs {dg:.5}; {secs:.0} s (< 7200)"
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn scenario1_full_timing() -> Outcome {
    let spec = ScenarioSpec::preset("scenario1").unwrap();
    let data = gen_scenario(&spec, &mut RngStream::new(spec.seed, 0)).unwrap();
    let mask = SelectionMask::new(spec.j, 1, 1, false);
    let hyper = Hyperparameters::default();
    let model = Model::new(&data.counts, &data.design, &data.design, &hyper, &mask, ModelKind::Zidm).unwrap();
    let mut cfg = McmcConfig::new(20_000, 606);
    cfg.chains = 1;
    let start = Instant::now();
    let out = match run_mcmc(&model, &cfg) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    outcome(
        secs <= 600.0 && out.trace.len() == 1_000,
        format!("N=100, J=50, 20000 iterations in {secs:.1} s (<= 600), {:.2} ms/iteration", 1e3 * secs / 20_000.0),
    )
}

// 7 ---------------------------------------------------------------------

fn scenario2_selection() -> Outcome {
    let start = Instant::now();
    let spec = ScenarioSpec::preset("scenario2-reduced").unwrap();
    let opts = StudyOptions { fit_dm: false, ..StudyOptions::default() };
    let replicates = 10;
    let table = match run_replicate_study(&spec, replicates, &McmcConfig::new(20_000, 707), &opts) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    if !table.failures.is_empty() {
        return outcome(false, format!("{} replicate(s) failed: {:?}", table.failures.len(), table.failures));
    }
    let stat = |param: &str, f: fn(&zidm::simulation::StudyRow) -> Option<f64>| {
        let v: Vec<f64> = table.rows_for("ZIDMbvs", param).filter_map(f).collect();
        (mean(&v), v.len())
    };
    let (g_sens, n1) = stat("beta_gamma", |r| r.sens);
    let (g_spec, _) = stat("beta_gamma", |r| r.spec);
    let (t_spec, n2) = stat("beta_theta", |r| r.spec);
    let (t_sens, _) = stat("beta_theta", |r| r.sens);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        g_sens >= 0.70 && g_spec >= 0.90 && t_spec >= 0.90 && n1 == replicates && n2 == replicates,
        format!(
            "beta_gamma SENS {g_sens:.3} (>= 0.70) SPEC {g_spec:.4} (>= 0.90); beta_theta SPEC {t_spec:.4} (>= 0.90), SENS {t_sens:.3}; {secs:.0} s"
        ),
    )
}

// 8 ---------------------------------------------------------------------

fn scenario3_zero_fraction() -> Outcome {
    let spec = ScenarioSpec::preset("scenario3").unwrap();
    let fractions: Vec<f64> =
        (0..20).map(|r| gen_scenario(&spec, &mut RngStream::new(spec.seed, r)).unwrap().zero_fraction()).collect();
    let m = mean(&fractions);
    outcome((m - 0.30).abs() <= 0.07, format!("mean zero fraction {m:.4} over 20 replicates (target 0.30 +/- 0.07)"))
}

// 9 ---------------------------------------------------------------------

fn metric_examples() -> Outcome {
    let start = Instant::now();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("abs identical", metric_abs(&[0.3, 0.7], &[0.3, 0.7]).unwrap() == 0.0);
    check("abs shifted", close(metric_abs(&[0.11, 0.51, 0.31], &[0.1, 0.5, 0.3]).unwrap(), 0.01));
    check("abs hand", close(metric_abs(&[0.2, 0.8], &[0.5, 0.5]).unwrap(), 0.3));
    check("abs shape", metric_abs(&[0.2], &[0.5, 0.5]).is_err());

    check("frob identical", metric_frob(&[0.3, 0.7], &[0.3, 0.7]).unwrap() == 0.0);
    check("frob single", close(metric_frob(&[0.6, 0.5], &[0.5, 0.5]).unwrap(), 0.1));
    check("frob 2x2", close(metric_frob(&[0.1; 4], &[0.0; 4]).unwrap(), 0.2));
    check("frob shape", metric_frob(&[0.1; 3], &[0.0; 4]).is_err());

    let est = array![[0.5, 0.5], [0.2, 0.8]];
    let truth = array![[1.0, 0.0], [0.3, 0.7]];
    check("simp identical", metric_simp(&truth, &truth).unwrap() == 0.0);
    check("simp hand", metric_simp(&array![[0.5, 0.5]], &array![[1.0, 0.0]]).unwrap() == 0.25);
    let swapped = |a: &Array2<f64>| a.slice(s![.., ..;-1]).to_owned();
    check("simp permutation", metric_simp(&swapped(&est), &swapped(&truth)).unwrap() == metric_simp(&est, &truth).unwrap());
    check("simp shape", metric_simp(&est, &array![[1.0, 0.0]]).is_err());

    check("cov all", metric_cov(&[(0.0, 1.0); 3], &[0.2, 0.5, 0.9]).unwrap() == 1.0);
    check("cov degenerate", metric_cov(&[(0.2, 0.2), (0.7, 0.7)], &[0.2, 0.7]).unwrap() == 1.0);
    check("cov half", metric_cov(&[(0.0, 0.5), (0.0, 0.5)], &[0.3, 0.8]).unwrap() == 0.5);
    check("cov shape", metric_cov(&[(0.0, 0.5)], &[0.3, 0.8]).is_err());

    let perfect = [true, false, true, false, false];
    let m = selection_metrics(&perfect, &perfect).unwrap();
    check("selection perfect", (m.sens, m.spec, m.mcc, m.f1) == (1.0, 1.0, 1.0, 1.0));
    // TP=3, FP=1, FN=1, TN=5.
    let truth = [true, true, true, true, false, false, false, false, false, false];
    let sel = [true, true, true, false, true, false, false, false, false, false];
    let m = selection_metrics(&sel, &truth).unwrap();
    check("selection hand sens", m.sens == 0.75);
    check("selection hand spec", m.spec == 5.0 / 6.0);
    check("selection hand mcc", m.mcc == 14.0 / 24.0);
    check("selection hand f1", m.f1 == 0.75);
    let m = selection_metrics(&[false; 4], &[false; 4]).unwrap();
    check("selection empty", (m.sens, m.spec, m.mcc, m.f1) == (1.0, 1.0, 0.0, 0.0));
    check("selection shape", selection_metrics(&[true], &[true, false]).is_err());

    let secs = start.elapsed().as_secs_f64();
    if failures.is_empty() && secs < 1.0 {
        outcome(true, format!("23 worked examples, {:.1} ms (< 1 s)", secs * 1e3))
    } else {
        outcome(false, format!("failed: {failures:?}, {secs:.3} s"))
    }
}

// 10 --------------------------------------------------------------------

fn determinism() -> Outcome {
    use zidm_cli::args::{FitArgs, McmcArgs};
    use zidm_cli::commands::cmd_fit;
    use zidm_cli::config::RunConfig;

    let start = Instant::now();
    let dir = tempfile::TempDir::new().unwrap();
    let spec = ScenarioSpec::preset("tiny").unwrap();
    let data = gen_scenario(&spec, &mut RngStream::new(spec.seed, 0)).unwrap();
    let counts = dir.path().join("counts.csv");
    let covariates = dir.path().join("covariates.csv");
    zidm_cli::io::write_counts(&counts, &data.counts).unwrap();
    let x = data.design.x().slice(s![.., 1..]).to_owned();
    zidm_cli::io::write_matrix(&covariates, "sample_id", data.counts.sample_ids(), &data.design.names()[1..], &x).unwrap();

    let run = |name: &str| {
        let args = FitArgs {
            counts: Some(counts.clone()),
            covariates: Some(covariates.clone()),
            output: Some(dir.path().join(name)),
            mcmc: McmcArgs {
                iterations: Some(2_000),
                seed: Some(10),
                chains: Some(2),
                monitor: Some(vec!["all".into()]),
                adapt_rw: Some(true),
                ..McmcArgs::default()
            },
            ..FitArgs::default()
        };
        cmd_fit(&RunConfig::resolve(&args).unwrap()).unwrap();
    };
    run("a");
    run("b");
    let read = |name: &str, file: &str| std::fs::read(dir.path().join(name).join(file)).unwrap();
    let without_timing = |name: &str| {
        let mut v: serde_json::Value = serde_json::from_slice(&read(name, "summary.json")).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        serde_json::to_string_pretty(&v).unwrap()
    };
    let mut differing: Vec<&str> = ["trace.csv.gz", "trace_meta.json", "selected.csv", "abundance.csv"]
        .into_iter()
        .filter(|f| read("a", f) != read("b", f))
        .collect();
    if without_timing("a") != without_timing("b") {
        differing.push("summary.json");
    }
    let trace_bytes = read("a", "trace.csv.gz").len();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        differing.is_empty() && secs < 60.0 && Path::new(&dir.path().join("a/trace.csv.gz")).is_file(),
        if differing.is_empty() {
            format!("two fits byte-identical (trace {trace_bytes} bytes gz; summary minus timing), {secs:.1} s (< 60)")
        } else {
            format!("differing artifacts: {differing:?}")
        },
    )
}

// -----------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        (1, "conjugate-oracle", conjugate_oracle),
        (2, "polya-gamma-moments", polya_gamma_moments),
        (3, "geweke", geweke),
        (4, "expand-contract", expand_contract),
        (5, "scenario1-reduced", scenario1_reduced),
        (6, "scenario1-timing", scenario1_full_timing),
        (7, "scenario2-selection", scenario2_selection),
        (8, "scenario3-zero-fraction", scenario3_zero_fraction),
        (9, "metric-examples", metric_examples),
        (10, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let wanted = |f: &String| match f.parse::<u32>() {
            Ok(n) => n == id,
            Err(_) => name.contains(f.as_str()),
        };
        if !filters.is_empty() && !filters.iter().any(wanted) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "[{}] {id} {name}: {} ({:.1} s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
