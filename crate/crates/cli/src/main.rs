use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustfolio_cli::commands::{self, Backend, SweepParam};
use robustfolio_cli::prices::TRADING_DAYS;
use robustfolio_cli::{CliError, CliResult, Overrides, RunConfig};

/// Robust portfolio selection under drift ambiguity with Bayesian learning.
#[derive(Debug, Parser)]
#[command(name = "robustfolio", version)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate sigma, y0 and sigma0^2 from a `date,close` CSV.
    Estimate {
        #[arg(long)]
        prices: PathBuf,
        /// Sampling interval in years.
        #[arg(long, default_value_t = 1.0 / TRADING_DAYS)]
        delta_years: f64,
    },
    /// Solve for f on the grid; write the surface and the trading regions.
    Solve,
    /// Robust position and its decomposition at one state.
    StrategyAt {
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
        #[arg(long, value_enum, default_value = "quadrature")]
        backend: Backend,
    },
    /// Robust position at t across values of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// States to evaluate; defaults to the prior mean.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ys: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Monte Carlo comparison of the robust, partial-information and Merton strategies.
    Simulate {
        /// prior-draw, worst-case or fixed (with --mu).
        #[arg(long)]
        drift: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
        /// Rerun with twice the steps and compare mean utilities.
        #[arg(long)]
        refine: bool,
        /// Also write every path's terminal wealth.
        #[arg(long)]
        keep_paths: bool,
    },
    /// Search for constants satisfying the admissibility inequalities.
    Check {
        #[arg(long, default_value_t = robustfolio::strategy::DEFAULT_ADMISSIBILITY_BUDGET)]
        budget: usize,
        /// Also evaluate at this (delta1, delta7, epsilon3).
        #[arg(long, value_delimiter = ',')]
        at: Option<Vec<f64>>,
    },
    /// Write (t, y, f, f_y) from either backend and verify the re-import.
    ExportSurface {
        #[arg(long, value_enum, default_value = "fd")]
        backend: Backend,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&cli.overrides);
    let out = match cli.command {
        Command::Estimate { prices, delta_years } => commands::run_estimate(&cfg, &prices, delta_years)?.1,
        Command::Solve => commands::run_solve(&cfg)?,
        Command::StrategyAt { t, y, backend } => commands::run_strategy_at(&cfg, t, y, backend)?,
        Command::Sweep { param, values, ys, t } => {
            let ys = if ys.is_empty() { vec![cfg.prior.y0] } else { ys };
            commands::run_sweep(&cfg, param, &values, t, &ys)?
        }
        Command::Simulate {
            drift,
            mu,
            refine,
            keep_paths,
        } => {
            if let Some(d) = drift {
                cfg.scenario.drift_mode = commands::drift_mode(&d, mu)?;
            } else if mu.is_some() {
                return Err(CliError::config("--mu needs --drift fixed"));
            }
            cfg.scenario.keep_paths |= keep_paths;
            commands::run_simulate(&cfg, refine)?
        }
        Command::Check { budget, at } => {
            let fixed = match at.as_deref() {
                None => None,
                Some(&[d1, d7, e3]) => Some((d1, d7, e3)),
                Some(v) => return Err(CliError::config(format!("--at needs delta1,delta7,epsilon3, got {} values", v.len()))),
            };
            commands::run_check(&cfg, budget, fixed)?
        }
        Command::ExportSurface { backend } => commands::run_export_surface(&cfg, backend)?,
    };
    let mut text = out.summary;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    for f in &out.files {
        text.push_str(&format!("wrote {}\n", f.display()));
    }
    Ok(text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
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
