use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pvar_cli::{cmds, config};

#[derive(Parser)]
#[command(
    name = "pvar",
    version,
    about = "Bayesian panel VAR estimation, forecasting and spillover indices"
)]
struct Cli {
    /// Config file, flat key = value text or JSON.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root RNG seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 picks one per core), overriding the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Download the listed series into a wide panel CSV.
    Fetch,
    /// Generate a synthetic panel with known coefficients.
    Simulate,
    /// Estimate the panel VAR and persist the posterior draws.
    Estimate,
    /// Forecast from stored draws; with a hold-out schedule, also run the
    /// recursive evaluation.
    Forecast,
    /// Rolling spillover indices over a window schedule.
    Spillover,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version land on stdout and exit 0; rejected
            // invocations are validation failures
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> pvar_cli::CliResult<()> {
    let cfg = config::effective(
        cli.config.as_deref(),
        cli.seed,
        cli.threads,
        cli.out.as_deref(),
    )?;
    let threads: usize = cfg.parse_or("threads", 0)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(pvar_cli::validation)?;
    }
    match cli.cmd {
        Cmd::Fetch => cmds::cmd_fetch(&cfg),
        Cmd::Simulate => cmds::cmd_simulate(&cfg),
        Cmd::Estimate => cmds::cmd_estimate(&cfg).map(|_| ()),
        Cmd::Forecast => cmds::cmd_forecast(&cfg),
        Cmd::Spillover => cmds::cmd_spillover(&cfg),
    }
}
