use std::path::PathBuf;
use std::process::ExitCode;

use accel_leak_cli::commands::{self, check_expectation};
use accel_leak_cli::{CliError, Context, Format, Overrides, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "accel-leak",
    version,
    about = "Memory-trace side-channel laboratory for tiled DNN accelerators"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides scenario.seed (and NP_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory (and NP_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// What to print on stdout.
    #[arg(long, global = true, default_value = "json")]
    format: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate traces and bin-packing reports.
    Simulate,
    /// Run the configured attacks on simulated traces.
    Attack,
    /// Sweep the search-space size over noise levels and compression priors.
    Searchspace,
    /// Leakage metrics against the permutation floor.
    Metrics,
    /// Summarize the reports in the output directory.
    Report,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let format: Format = cli.format.parse()?;
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let ov = Overrides::from_env()?.then(Overrides {
        seed: cli.seed,
        out: cli.out,
    });
    let cfg = RunConfig::load(&path, &ov)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let ctx = Context::new(cfg, format);
    pool.install(|| match cli.cmd {
        Cmd::Simulate => commands::simulate(&ctx),
        Cmd::Attack => {
            let (outcome, text) = commands::attack(&ctx)?;
            print!("{text}");
            check_expectation(&outcome).map(|_| String::new())
        }
        Cmd::Searchspace => commands::searchspace(&ctx),
        Cmd::Metrics => commands::metrics(&ctx),
        Cmd::Report => commands::report(&ctx),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
