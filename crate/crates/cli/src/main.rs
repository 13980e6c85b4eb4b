use std::process::ExitCode;

use clap::Parser;
use zidm_cli::args::{Cli, Command};
use zidm_cli::commands::{cmd_fit, cmd_simulate, cmd_summarize};
use zidm_cli::config::RunConfig;
use zidm_cli::{CliError, Result};

fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    pool.build_global().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::Fit(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let report = cmd_fit(&cfg)?;
            let sel = &report.summary.selection;
            println!(
                "wrote {} ({} samples; {} gamma and {} theta covariate terms selected by {})",
                report.output.display(),
                report.summary.posterior.samples,
                sel.gamma.selected_terms,
                sel.theta.as_ref().map_or(0, |t| t.selected_terms),
                sel.rule
            );
        }
        Command::Simulate(args) => {
            let report = cmd_simulate(&args)?;
            let mean_zero = report.zero_fractions.iter().sum::<f64>() / report.zero_fractions.len() as f64;
            println!(
                "wrote {} replicate(s) to {} (mean zero fraction {mean_zero:.3})",
                report.zero_fractions.len(),
                args.output.display()
            );
            if let Some(study) = report.study {
                for (r, e) in &study.failures {
                    eprintln!("replicate {} failed: {e}", r + 1);
                }
            }
        }
        Command::Summarize(args) => {
            let doc = cmd_summarize(&args)?;
            println!("wrote {} ({} samples, rule {})", args.output.display(), doc.posterior.samples, doc.selection.rule);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZIDM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
