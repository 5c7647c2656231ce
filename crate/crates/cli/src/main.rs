use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamred_cli::commands::{self, CliError, ExperimentArgs, RunArgs};
use hamred_core::checks::Scale;

#[derive(Parser)]
#[command(name = "hamred", version, about = "Dictionary-based symplectic model order reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the training runs and write the dictionary file.
    Offline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Overwrite an existing dictionary file.
        #[arg(long)]
        force: bool,
    },
    /// Run one method at one parameter and write its results and per-step series.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long = "m_s")]
        m_s: Option<usize>,
        /// Selected snapshots (dictionary methods) or basis size (standard methods).
        #[arg(long = "n_s")]
        n_s: Option<usize>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep every method, test parameter and grid combination of the config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acceptance checks, or verify a dictionary file with --dictionary.
    Check {
        #[arg(long, default_value_t = Scale::Desk)]
        scale: Scale,
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("HAMRED_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError(format!("HAMRED_THREADS must be a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError(format!("cannot size the worker pool: {e}")))
}

fn execute(cli: Cli) -> Result<ExitCode, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Offline { config, dictionary, force } => {
            println!("{}", commands::offline(&config, dictionary.as_deref(), force)?);
        }
        Command::Run { config, method, mu, m_s, n_s, dictionary, out, seed } => {
            let s = commands::run(&RunArgs { config, method, mu, m_s, n_s, dictionary, out, seed })?;
            let r = &s.row;
            println!(
                "{} at mu = {}: e_rel = {:.3e}, n_mean = {:.1}",
                r.method,
                r.mu,
                r.e_rel.unwrap_or(f64::NAN),
                r.n_mean.unwrap_or(f64::NAN)
            );
            println!("wrote {} and {}", s.results.display(), s.steps.display());
        }
        Command::Experiment { config, dictionary, out, seed } => {
            let s = commands::experiment(&ExperimentArgs { config, dictionary, out, seed })?;
            println!("{} runs, {} failed; results in {}", s.runs, s.failed, s.results.display());
        }
        Command::Check { scale, dictionary } => {
            let report = commands::check(scale, dictionary.as_deref(), |o| println!("{}", o.line()));
            let failed = report.failed();
            println!("{failed} of {} checks failed", report.outcomes.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
