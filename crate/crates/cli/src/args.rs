use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "zidm", version, about = "Bayesian zero-inflated Dirichlet-multinomial regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for chains and replicates (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a count matrix and write trace and summaries.
    Fit(FitArgs),
    /// Generate replicate datasets from a scenario, optionally fitting them.
    Simulate(SimulateArgs),
    /// Recompute summaries and selection from an existing trace.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct McmcArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Per-cell blocks to store: psi, eta, c, u, omega, all or none.
    #[arg(long, value_delimiter = ',')]
    pub monitor: Option<Vec<String>>,
    /// Tune the coefficient random-walk scale during burn-in.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adapt_rw: Option<bool>,
    /// Check state invariants after every kernel (slow).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub debug_validate: Option<bool>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub sigma2_beta_gamma: Option<f64>,
    #[arg(long)]
    pub sigma2_beta_theta: Option<f64>,
    #[arg(long)]
    pub a_varphi: Option<f64>,
    #[arg(long)]
    pub b_varphi: Option<f64>,
    #[arg(long)]
    pub a_zeta: Option<f64>,
    #[arg(long)]
    pub b_zeta: Option<f64>,
    #[arg(long)]
    pub rw_step_gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    /// TOML file with [data], [model], [mcmc] and [hyper] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Covariates for both levels (intercept added automatically).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Separate covariates for the zero-inflation level.
    #[arg(long)]
    pub theta_covariates: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// zidm or dm.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub selection: Option<bool>,
    /// Center and scale covariate columns.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    /// median, median:<threshold> or bfdr:<alpha>.
    #[arg(long)]
    pub rule: Option<String>,
    /// Credible interval level.
    #[arg(long)]
    pub level: Option<f64>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// Scenario file (TOML or JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Override the scenario's generation seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
    /// Fit every replicate and write metrics.csv.
    #[arg(long)]
    pub fit: bool,
    /// Also fit the plain DM baseline when fitting.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub baseline: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub selection: bool,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Fit output directory or its trace.csv.gz.
    pub trace: PathBuf,
    #[arg(long, default_value = "median")]
    pub rule: String,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub output: PathBuf,
}
