//! Run configuration: a TOML file merged with command-line flags.
//!
//! Precedence is flags > file > built-in defaults. Relative paths in a
//! config file are resolved against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use zidm::model::{Hyperparameters, ModelKind};
use zidm::sampler::{McmcConfig, Monitor};

use crate::args::{FitArgs, HyperArgs, McmcArgs};
use crate::error::{CliError, Result};

/// How inclusion indicators are turned into a selected set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    /// Include coefficients with MPPI at or above the threshold.
    Median(f64),
    /// Bayesian FDR control at level alpha.
    Bfdr(f64),
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::Median(0.5)
    }
}

impl FromStr for SelectionRule {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Config(format!("invalid selection rule '{s}' (expected median, median:<t> or bfdr:<alpha>)"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let rule = match (name.trim().to_ascii_lowercase().as_str(), arg) {
            ("median", None) => SelectionRule::Median(0.5),
            ("median", Some(t)) if (0.0..=1.0).contains(&t) => SelectionRule::Median(t),
            ("bfdr", None) => SelectionRule::Bfdr(0.05),
            ("bfdr", Some(a)) if a > 0.0 && a < 1.0 => SelectionRule::Bfdr(a),
            _ => return Err(bad()),
        };
        Ok(rule)
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::Median(t) => write!(f, "median:{t}"),
            SelectionRule::Bfdr(a) => write!(f, "bfdr:{a}"),
        }
    }
}

pub fn parse_kind(s: &str) -> Result<ModelKind> {
    match s.to_ascii_lowercase().as_str() {
        "zidm" => Ok(ModelKind::Zidm),
        "dm" => Ok(ModelKind::Dm),
        _ => Err(CliError::Config(format!("unknown model '{s}' (expected zidm or dm)"))),
    }
}

/// Comma-separated block names, e.g. `psi,eta`. `none` stores no per-cell
/// block.
pub fn parse_monitor(list: &[String]) -> Result<Monitor> {
    let mut m = Monitor { psi: false, eta: false, c: false, u: false, omega: false };
    for item in list.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "psi" => m.psi = true,
            "eta" => m.eta = true,
            "c" => m.c = true,
            "u" => m.u = true,
            "omega" => m.omega = true,
            "none" => {}
            "all" => m = Monitor { psi: true, eta: true, c: true, u: true, omega: true },
            other => return Err(CliError::Config(format!("unknown monitor block '{other}'"))),
        }
    }
    Ok(m)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub counts: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub theta_covariates: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<String>,
    pub selection: Option<bool>,
    pub standardize: Option<bool>,
    pub rule: Option<String>,
    pub level: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub monitor: Option<Vec<String>>,
    pub adapt_rw: Option<bool>,
    pub debug_validate: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub sigma2_beta_gamma: Option<f64>,
    pub sigma2_beta_theta: Option<f64>,
    pub a_varphi: Option<f64>,
    pub b_varphi: Option<f64>,
    pub a_zeta: Option<f64>,
    pub b_zeta: Option<f64>,
    pub rw_step_gamma: Option<f64>,
}

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub mcmc: McmcSection,
    pub hyper: HyperSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for slot in [&mut cfg.data.counts, &mut cfg.data.covariates, &mut cfg.data.theta_covariates, &mut cfg.data.output] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

/// A fully resolved `fit` invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub counts: PathBuf,
    pub covariates: Option<PathBuf>,
    pub theta_covariates: Option<PathBuf>,
    pub output: PathBuf,
    pub kind: ModelKind,
    pub selection: bool,
    pub standardize: bool,
    #[serde(serialize_with = "display")]
    pub rule: SelectionRule,
    pub level: f64,
    pub hyper: Hyperparameters,
    pub mcmc: McmcConfig,
}

fn display<S: serde::Serializer>(rule: &SelectionRule, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(rule)
}

pub fn resolve_mcmc(flags: &McmcArgs, file: &McmcSection) -> Result<McmcConfig> {
    let iterations = flags.iterations.or(file.iterations).unwrap_or(20_000);
    let mut cfg = McmcConfig::new(iterations, flags.seed.or(file.seed).unwrap_or(0));
    if let Some(b) = flags.burn_in.or(file.burn_in) {
        cfg.burn_in = b;
    }
    if let Some(t) = flags.thin.or(file.thin) {
        cfg.thin = t;
    }
    if let Some(c) = flags.chains.or(file.chains) {
        cfg.chains = c;
    }
    if let Some(list) = flags.monitor.as_ref().or(file.monitor.as_ref()) {
        cfg.monitor = parse_monitor(list)?;
    }
    cfg.adapt_rw = flags.adapt_rw.or(file.adapt_rw).unwrap_or(false);
    cfg.debug_validate = flags.debug_validate.or(file.debug_validate).unwrap_or(false);
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_hyper(flags: &HyperArgs, file: &HyperSection) -> Result<Hyperparameters> {
    let d = Hyperparameters::default();
    let h = Hyperparameters {
        sigma2_beta_gamma: flags.sigma2_beta_gamma.or(file.sigma2_beta_gamma).unwrap_or(d.sigma2_beta_gamma),
        sigma2_beta_theta: flags.sigma2_beta_theta.or(file.sigma2_beta_theta).unwrap_or(d.sigma2_beta_theta),
        a_varphi: flags.a_varphi.or(file.a_varphi).unwrap_or(d.a_varphi),
        b_varphi: flags.b_varphi.or(file.b_varphi).unwrap_or(d.b_varphi),
        a_zeta: flags.a_zeta.or(file.a_zeta).unwrap_or(d.a_zeta),
        b_zeta: flags.b_zeta.or(file.b_zeta).unwrap_or(d.b_zeta),
        rw_step_gamma: flags.rw_step_gamma.or(file.rw_step_gamma).unwrap_or(d.rw_step_gamma),
    };
    h.validate()?;
    Ok(h)
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("{what} file {} does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn resolve(args: &FitArgs) -> Result<RunConfig> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let counts = args
            .counts
            .clone()
            .or(file.data.counts)
            .ok_or_else(|| CliError::Config("no counts file given (--counts or [data].counts)".into()))?;
        let output = args
            .output
            .clone()
            .or(file.data.output)
            .ok_or_else(|| CliError::Config("no output directory given (--output or [data].output)".into()))?;
        let covariates = args.covariates.clone().or(file.data.covariates);
        let theta_covariates = args.theta_covariates.clone().or(file.data.theta_covariates);
        let kind = match args.model.as_deref().or(file.model.kind.as_deref()) {
            Some(k) => parse_kind(k)?,
            None => ModelKind::Zidm,
        };
        if theta_covariates.is_some() && !kind.zero_inflated() {
            return Err(CliError::Config("theta covariates given but the dm model has no zero-inflation level".into()));
        }
        let rule = match args.rule.as_deref().or(file.model.rule.as_deref()) {
            Some(r) => r.parse()?,
            None => SelectionRule::default(),
        };
        let level = args.level.or(file.model.level).unwrap_or(0.95);
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Config(format!("interval level must lie in (0, 1), got {level}")));
        }
        Ok(RunConfig {
            counts: existing(counts, "counts")?,
            covariates: covariates.map(|p| existing(p, "covariates")).transpose()?,
            theta_covariates: theta_covariates.map(|p| existing(p, "theta covariates")).transpose()?,
            output,
            kind,
            selection: args.selection.or(file.model.selection).unwrap_or(true),
            standardize: args.standardize.or(file.model.standardize).unwrap_or(true),
            rule,
            level,
            hyper: resolve_hyper(&args.hyper, &file.hyper)?,
            mcmc: resolve_mcmc(&args.mcmc, &file.mcmc)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_parsing() {
        assert_eq!("median".parse::<SelectionRule>().unwrap(), SelectionRule::Median(0.5));
        assert_eq!("median:0.7".parse::<SelectionRule>().unwrap(), SelectionRule::Median(0.7));
        assert_eq!("bfdr:0.05".parse::<SelectionRule>().unwrap(), SelectionRule::Bfdr(0.05));
        assert_eq!("BFDR".parse::<SelectionRule>().unwrap(), SelectionRule::Bfdr(0.05));
        for bad in ["bfdr:0", "bfdr:1.5", "median:2", "mode", "bfdr:x"] {
            assert!(bad.parse::<SelectionRule>().is_err(), "{bad}");
        }
        assert_eq!(SelectionRule::Bfdr(0.05).to_string(), "bfdr:0.05");
    }

    #[test]
    fn monitor_lists() {
        let m = parse_monitor(&["psi,eta".into(), "u".into()]).unwrap();
        assert!(m.psi && m.eta && m.u && !m.c && !m.omega);
        let none = parse_monitor(&["none".into()]).unwrap();
        assert!(!none.psi);
        assert!(parse_monitor(&["beta".into()]).is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file: FileConfig = toml::from_str(
            "[mcmc]\niterations = 400\nthin = 5\nseed = 9\n[hyper]\nsigma2_beta_gamma = 2.0\na_zeta = 3.0\n",
        )
        .unwrap();
        let flags = McmcArgs { iterations: Some(200), ..Default::default() };
        let m = resolve_mcmc(&flags, &file.mcmc).unwrap();
        assert_eq!((m.iterations, m.burn_in, m.thin, m.seed), (200, 100, 5, 9));

        let hflags = HyperArgs { a_zeta: Some(0.5), ..Default::default() };
        let h = resolve_hyper(&hflags, &file.hyper).unwrap();
        assert_eq!(h.sigma2_beta_gamma, 2.0);
        assert_eq!(h.a_zeta, 0.5);
        assert_eq!(h.b_zeta, Hyperparameters::default().b_zeta);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[mcmc]\niteration = 3\n").is_err());
        assert!(toml::from_str::<FileConfig>("[sampler]\n").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let file = FileConfig::default();
        let flags = McmcArgs { iterations: Some(100), burn_in: Some(200), ..Default::default() };
        assert!(matches!(resolve_mcmc(&flags, &file.mcmc), Err(CliError::Config(_))));
        let h = HyperArgs { sigma2_beta_theta: Some(-1.0), ..Default::default() };
        assert!(matches!(resolve_hyper(&h, &file.hyper), Err(CliError::Config(_))));
    }
}
