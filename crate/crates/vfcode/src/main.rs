use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vfcode::cli::{self, Overrides, RunConfig};

/// Variable-to-fixed length lossy source coding workbench.
#[derive(Parser)]
#[command(name = "vfcode", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; required by stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Grid width for the exact-analysis bracket.
    #[arg(long, global = true)]
    eta: Option<f64>,

    /// Override slack pair `shift,cap` for small-block experiments.
    #[arg(long, global = true, value_name = "SHIFT,CAP")]
    slack: Option<String>,

    /// Replace Monte Carlo by the exact analysis (lifts the lnM guard).
    #[arg(long, global = true)]
    exact_only: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Rate-distortion curve over the `D` grid.
    Rd,
    /// Monte Carlo of the inner and wrapped codes over the `N` grid.
    Simulate,
    /// Exact analysis plus comparator bounds over the `N` grid.
    Sweep,
    /// Dictionary statistics over the `M` grid.
    Tunstall,
    /// Comparator bound values over the `N` grid.
    Bounds,
}

fn run(args: &Cli) -> vfcode::Result<String> {
    let config = args
        .config
        .as_ref()
        .ok_or_else(|| vfcode::Error::Config("--config is required".into()))?;
    let slack = match &args.slack {
        Some(text) => Some(cli::parse_slack_pair(text)?),
        None => None,
    };
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        eta: args.eta,
        slack,
        exact_only: args.exact_only,
    };
    let cfg: RunConfig = cli::load_config(config, &overrides)?;
    let output = match args.command {
        Command::Rd => cli::cmd_rd(&cfg)?,
        Command::Simulate => cli::cmd_simulate(&cfg)?,
        Command::Sweep => cli::cmd_sweep(&cfg)?,
        Command::Tunstall => cli::cmd_tunstall(&cfg)?,
        Command::Bounds => cli::cmd_bounds(&cfg)?,
    };
    if let Some(path) = &cfg.out {
        std::fs::write(path, &output)
            .map_err(|e| vfcode::Error::Config(format!("cannot write {}: {e}", path.display())))?;
    } else {
        print!("{output}");
    }
    Ok(output)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(&args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
