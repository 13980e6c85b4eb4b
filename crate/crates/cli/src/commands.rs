use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use zidm::distributions::RngStream;
use zidm::inference::{mppi, select_bfdr, select_median_model, summarize, PosteriorSummary};
use zidm::model::{DesignMatrix, Model, ModelKind, SelectionMask, Trace, TraceMeta};
use zidm::sampler::{Counter, KernelDiagnostics, Mcmc, Monitor};
use zidm::simulation::{gen_scenario, run_replicate_study, ScenarioSpec, StudyOptions, StudyRow, StudyTable};

use crate::args::{SimulateArgs, SummarizeArgs};
use crate::config::{resolve_hyper, resolve_mcmc, HyperSection, McmcSection, RunConfig, SelectionRule};
use crate::error::{CliError, Result};
use crate::io;

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Names {
    pub samples: Vec<String>,
    pub taxa: Vec<String>,
    pub covariates_gamma: Vec<String>,
    pub covariates_theta: Option<Vec<String>>,
}

/// `trace_meta.json`: what a reader needs to interpret `trace.csv.gz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub meta: TraceMeta,
    pub selection_enabled: bool,
    pub monitor: Monitor,
    pub names: Names,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSelection {
    /// J×P inclusion flags, intercepts included.
    pub included: Vec<Vec<bool>>,
    /// Selected covariate terms, intercepts excluded.
    pub selected_terms: usize,
    /// MPPI cut-off chosen by the BFDR rule.
    pub bfdr_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub rule: String,
    pub gamma: LevelSelection,
    pub theta: Option<LevelSelection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelRate {
    pub attempts: u64,
    pub accepts: u64,
    pub rate: Option<f64>,
}

impl From<&Counter> for KernelRate {
    fn from(c: &Counter) -> Self {
        KernelRate { attempts: c.attempts, accepts: c.accepts, rate: (c.attempts > 0).then(|| c.rate()) }
    }
}

fn kernel_rates(d: &KernelDiagnostics) -> BTreeMap<&'static str, KernelRate> {
    [
        ("expand", &d.expand),
        ("contract", &d.contract),
        ("gamma_add", &d.gamma_add),
        ("gamma_delete", &d.gamma_delete),
        ("gamma_within", &d.gamma_within),
        ("theta_add", &d.theta_add),
        ("theta_delete", &d.theta_delete),
    ]
    .into_iter()
    .map(|(k, c)| (k, c.into()))
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub seconds: f64,
    pub seconds_per_iteration: f64,
}

/// Contents of `summary.json`. Everything except `timing` is a pure
/// function of the trace and the fit settings.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryDocument {
    pub format_version: u32,
    pub model: ModelKind,
    pub selection_enabled: bool,
    /// False for the plain DM model, which has no zero-inflation level.
    pub zero_inflation_present: bool,
    pub names: Names,
    pub mcmc: TraceMeta,
    pub posterior: PosteriorSummary,
    pub selection: Selection,
    /// Kernel acceptance counts; absent when summarizing a stored trace.
    pub acceptance: Option<BTreeMap<&'static str, KernelRate>>,
    pub timing: Option<Timing>,
}

fn apply_rule(mppi: &Array2<f64>, forced: &Array2<bool>, rule: SelectionRule) -> Result<LevelSelection> {
    let (mut included, bfdr_threshold) = match rule {
        SelectionRule::Median(t) => (select_median_model(mppi, t)?, None),
        SelectionRule::Bfdr(alpha) => {
            let (sel, kappa) = select_bfdr(mppi, alpha, Some(forced))?;
            (sel, Some(kappa))
        }
    };
    included.zip_mut_with(forced, |a, &f| *a |= f);
    let selected_terms = included.indexed_iter().filter(|((_, p), &on)| *p > 0 && on).count();
    Ok(LevelSelection { included: included.outer_iter().map(|r| r.to_vec()).collect(), selected_terms, bfdr_threshold })
}

/// Builds the summary document and writes `summary.json`, `selected.csv`
/// and (when ψ was monitored) `abundance.csv` into `dir`.
pub fn write_reports(
    dir: &Path,
    sidecar: &TraceSidecar,
    trace: &Trace,
    rule: SelectionRule,
    level: f64,
    diagnostics: Option<&KernelDiagnostics>,
) -> Result<SummaryDocument> {
    let posterior = summarize(trace, level)?;
    let probs = mppi(trace)?;
    let m = &trace.meta;
    let mask = SelectionMask::new(m.j, m.p_gamma, m.p_theta, sidecar.selection_enabled);
    let gamma = apply_rule(&probs.gamma, mask.forced_gamma(), rule)?;
    let theta = probs.theta.as_ref().map(|pt| apply_rule(pt, mask.forced_theta(), rule)).transpose()?;

    let mut w = csv::Writer::from_path(dir.join("selected.csv"))?;
    w.write_record(["level", "j", "p", "mppi", "included"])?;
    let levels = [("gamma", Some((&probs.gamma, &gamma))), ("theta", probs.theta.as_ref().zip(theta.as_ref()))];
    for (name, entry) in levels {
        let Some((mp, sel)) = entry else { continue };
        for ((j, p), v) in mp.indexed_iter() {
            let inc = if sel.included[j][p] { "1" } else { "0" };
            w.write_record([name, &j.to_string(), &p.to_string(), &v.to_string(), inc])?;
        }
    }
    w.flush()?;

    if let Some(psi) = &posterior.psi {
        let means = Array2::from_shape_fn((m.n, m.j), |(i, j)| psi[i][j].mean);
        io::write_matrix(&dir.join("abundance.csv"), "sample_id", &sidecar.names.samples, &sidecar.names.taxa, &means)?;
    } else {
        log::warn!("psi was not monitored; abundance.csv not written");
    }

    let doc = SummaryDocument {
        format_version: SUMMARY_FORMAT_VERSION,
        model: m.kind,
        selection_enabled: sidecar.selection_enabled,
        zero_inflation_present: m.kind.zero_inflated(),
        names: sidecar.names.clone(),
        mcmc: m.clone(),
        posterior,
        selection: Selection { rule: rule.to_string(), gamma, theta },
        acceptance: diagnostics.map(kernel_rates),
        timing: diagnostics.map(|d| Timing { seconds: d.seconds, seconds_per_iteration: d.seconds_per_iteration() }),
    };
    io::write_json(&dir.join("summary.json"), &doc)?;
    Ok(doc)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn load_design(path: Option<&Path>, ids: &[String], standardize: bool) -> Result<DesignMatrix> {
    match path {
        Some(p) => {
            let (x, names) = io::read_covariates(p, ids)?;
            Ok(DesignMatrix::from_covariates(&x, names, standardize)?)
        }
        None => Ok(DesignMatrix::intercept_only(ids.len())),
    }
}

pub struct FitReport {
    pub summary: SummaryDocument,
    pub output: PathBuf,
}

/// Fits the configured model and writes `trace.csv.gz`, `trace_meta.json`,
/// `summary.json`, `selected.csv`, `abundance.csv` and `run_config.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport> {
    let counts = io::read_counts(&cfg.counts)?;
    let ids = counts.sample_ids().to_vec();
    let x_gamma = load_design(cfg.covariates.as_deref(), &ids, cfg.standardize)?;
    let x_theta = match (cfg.kind, &cfg.theta_covariates) {
        (ModelKind::Dm, _) => DesignMatrix::intercept_only(ids.len()),
        (_, Some(p)) => load_design(Some(p), &ids, cfg.standardize)?,
        (_, None) => x_gamma.clone(),
    };
    let mask = SelectionMask::new(counts.j(), x_gamma.p(), x_theta.p(), cfg.selection);
    let model = Model::new(&counts, &x_gamma, &x_theta, &cfg.hyper, &mask, cfg.kind)?;
    create_dir(&cfg.output)?;
    io::write_json(&cfg.output.join("run_config.json"), cfg)?;

    log::info!(
        "fitting {:?}: N={} J={} P_gamma={} P_theta={} for {} iterations x {} chains",
        cfg.kind,
        counts.n(),
        counts.j(),
        x_gamma.p(),
        x_theta.p(),
        cfg.mcmc.iterations,
        cfg.mcmc.chains
    );
    let start = Instant::now();
    let out = Mcmc::new(&model, &cfg.mcmc).run()?;
    let mut diagnostics = out.diagnostics;
    diagnostics.seconds = start.elapsed().as_secs_f64();

    let sidecar = TraceSidecar {
        meta: out.trace.meta.clone(),
        selection_enabled: cfg.selection,
        monitor: cfg.mcmc.monitor,
        names: Names {
            samples: ids,
            taxa: counts.taxon_names().to_vec(),
            covariates_gamma: x_gamma.names().to_vec(),
            covariates_theta: cfg.kind.zero_inflated().then(|| x_theta.names().to_vec()),
        },
    };
    io::write_trace(&cfg.output.join("trace.csv.gz"), &out.trace)?;
    io::write_json(&cfg.output.join("trace_meta.json"), &sidecar)?;
    let summary = write_reports(&cfg.output, &sidecar, &out.trace, cfg.rule, cfg.level, Some(&diagnostics))?;
    Ok(FitReport { summary, output: cfg.output.clone() })
}

/// Locates `trace.csv.gz` and its sidecar from a directory or file path.
fn trace_paths(path: &Path) -> Result<(PathBuf, PathBuf)> {
    let trace = if path.is_dir() { path.join("trace.csv.gz") } else { path.to_path_buf() };
    if !trace.is_file() {
        return Err(CliError::Ingestion(format!("trace file {} not found", trace.display())));
    }
    let sidecar = trace.parent().unwrap_or(Path::new(".")).join("trace_meta.json");
    if !sidecar.is_file() {
        return Err(CliError::Ingestion(format!("trace metadata {} not found", sidecar.display())));
    }
    Ok((trace, sidecar))
}

pub fn load_trace(path: &Path) -> Result<(TraceSidecar, Trace)> {
    let (trace_path, sidecar_path) = trace_paths(path)?;
    let sidecar: TraceSidecar = io::read_json(&sidecar_path)?;
    let trace = io::read_trace(&trace_path, &sidecar.meta)?;
    if trace.is_empty() {
        return Err(CliError::Ingestion(format!("{} holds no samples", trace_path.display())));
    }
    Ok((sidecar, trace))
}

/// Recomputes the posterior summary and selection from a stored trace.
pub fn cmd_summarize(args: &SummarizeArgs) -> Result<SummaryDocument> {
    let rule: SelectionRule = args.rule.parse()?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Config(format!("interval level must lie in (0, 1), got {}", args.level)));
    }
    let (sidecar, trace) = load_trace(&args.trace)?;
    create_dir(&args.output)?;
    write_reports(&args.output, &sidecar, &trace, rule, args.level, None)
}

pub fn load_spec(args: &SimulateArgs) -> Result<ScenarioSpec> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), None) => ScenarioSpec::preset(name).ok_or_else(|| {
            CliError::Config(format!("unknown preset '{name}' (available: {})", ScenarioSpec::preset_names().join(", ")))
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read spec {}: {e}", path.display())))?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        _ => return Err(CliError::Config("give exactly one of --preset or --spec".into())),
    };
    if let Some(seed) = args.data_seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn replicate_dir(root: &Path, replicate: usize) -> PathBuf {
    root.join(format!("replicate_{:03}", replicate + 1))
}

pub struct SimulateReport {
    pub spec: ScenarioSpec,
    pub zero_fractions: Vec<f64>,
    pub study: Option<StudyTable>,
}

/// Writes `spec.json` and `replicate_NNN/{counts.csv, covariates.csv,
/// truth.json}`; with `--fit`, also `metrics.csv`. Replicate `r` is drawn
/// from generation stream `r` of the spec seed, the same data the study
/// runner fits.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateReport> {
    let spec = load_spec(args)?;
    if args.replicates == 0 {
        return Err(CliError::Config("replicates must be at least 1".into()));
    }
    let fit_settings = if args.fit {
        let mcmc = resolve_mcmc(&args.mcmc, &McmcSection::default())?;
        let hyper = resolve_hyper(&args.hyper, &HyperSection::default())?;
        if !(args.level > 0.0 && args.level < 1.0) {
            return Err(CliError::Config(format!("interval level must lie in (0, 1), got {}", args.level)));
        }
        Some((mcmc, StudyOptions { hyper, fit_dm: args.baseline, selection: args.selection, level: args.level }))
    } else {
        None
    };
    create_dir(&args.output)?;
    io::write_json(&args.output.join("spec.json"), &spec)?;

    let mut zero_fractions = Vec::with_capacity(args.replicates);
    for r in 0..args.replicates {
        let data = gen_scenario(&spec, &mut RngStream::new(spec.seed, r as u64))?;
        let dir = replicate_dir(&args.output, r);
        create_dir(&dir)?;
        io::write_counts(&dir.join("counts.csv"), &data.counts)?;
        let covariates = data.design.x().slice(s![.., 1..]).to_owned();
        io::write_matrix(
            &dir.join("covariates.csv"),
            "sample_id",
            data.counts.sample_ids(),
            &data.design.names()[1..],
            &covariates,
        )?;
        io::write_json(&dir.join("truth.json"), &data.truth)?;
        zero_fractions.push(data.zero_fraction());
    }

    let study = match fit_settings {
        Some((mcmc, opts)) => {
            let table = run_replicate_study(&spec, args.replicates, &mcmc, &opts)?;
            write_metrics(&args.output.join("metrics.csv"), &table)?;
            if table.rows.is_empty() {
                let why = table.failures.first().map(|(_, e)| e.as_str()).unwrap_or("no rows");
                return Err(CliError::Numerical(format!("every replicate fit failed: {why}")));
            }
            Some(table)
        }
        None => None,
    };
    Ok(SimulateReport { spec, zero_fractions, study })
}

pub const METRICS_HEADER: [&str; 12] =
    ["replicate", "model", "parameter", "ABS", "FROB", "SIMP", "COV", "SENS", "SPEC", "MCC", "F1", "time_s"];

fn metric_record(row: &StudyRow) -> Vec<String> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rec = vec![
        row.replicate.map(|r| (r + 1).to_string()).unwrap_or_else(|| "mean".into()),
        row.model.clone(),
        row.parameter.clone(),
    ];
    rec.extend([row.abs, row.frob, row.simp, row.cov, row.sens, row.spec, row.mcc, row.f1, row.time_s].map(cell));
    rec
}

/// One row per replicate, model and parameter, followed by the
/// across-replicate mean rows (replicate = `mean`).
pub fn write_metrics(path: &Path, table: &StudyTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in table.rows.iter().chain(table.means().iter()) {
        w.write_record(metric_record(row))?;
    }
    w.flush()?;
    Ok(())
}
