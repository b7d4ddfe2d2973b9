use std::path::PathBuf;
use std::process::ExitCode;

use adapspline::simlab::{Method, ScenarioId};
use adapspline_cli::commands::{self, Points, SimulateArgs};
use adapspline_cli::{split_overrides, CliError};
use clap::{CommandFactory, Parser, Subcommand};

/// Adaptive multidimensional P-spline smoothing.
///
/// Model settings (family, d, degree, q, mode, p, psi_degree, domain, ...)
/// can be given in a `key = value` config file or as `--key value` flags;
/// flags win.
#[derive(Parser)]
#[command(name = "adapspline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a smoother and write a JSON artifact.
    Fit {
        /// Input CSV with a header row.
        #[arg(long)]
        data: PathBuf,
        /// Config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output artifact path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict from a fitted artifact.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        /// CSV of prediction points with the covariate columns.
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        points: Option<PathBuf>,
        /// Regular grid over the fitted domain, e.g. 50x50.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation study on the built-in scenarios.
    Simulate {
        /// I, II or III.
        #[arg(long)]
        scenario: ScenarioId,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Gaussian noise standard deviation (Scenarios II and III).
        #[arg(long)]
        s: Option<f64>,
        /// Replicates.
        #[arg(long = "R", default_value_t = 250)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated: standard, adaptive-full.
        #[arg(long, value_delimiter = ',', default_value = "standard,adaptive-full")]
        methods: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-fit wall-clock times.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
    /// Write every penalty component as a Matrix Market file.
    DumpPenalty {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli, overrides: &[String]) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Fit { data, config, out } => {
            let cfg = commands::load_config(config.as_deref(), overrides)?;
            let outcome = commands::cmd_fit(&data, cfg, &out)?;
            for d in &outcome.artifact.diagnostics {
                eprintln!("warning: {d}");
            }
            if outcome.converged {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "warning: no convergence after {} iterations; artifact written to {}",
                    outcome.artifact.convergence.iterations,
                    out.display()
                );
                Ok(ExitCode::from(3))
            }
        }
        Command::Predict { artifact, points, grid, out } => {
            let level = level_override(overrides)?;
            let points = match (points, grid) {
                (Some(p), _) => Points::Csv(p),
                (None, Some(g)) => Points::Grid(commands::parse_grid_spec(&g)?),
                (None, None) => return Err(CliError::Input("give --points or --grid".into())),
            };
            commands::cmd_predict(&artifact, &points, level, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            scenario,
            n,
            s,
            replicates,
            seed,
            methods,
            out,
            timings,
        } => {
            let (settings, family) = commands::simulation_settings(overrides)?;
            let args = SimulateArgs {
                scenario,
                n,
                s,
                family,
                replicates,
                seed,
                methods,
            };
            let report = commands::cmd_simulate(&args, &settings, &out, timings.as_deref())?;
            for m in &report.summaries {
                eprintln!(
                    "{}: median log MSE {:.4}, {} of {} fits converged",
                    m.method, m.median_log_mse, m.converged, m.replicates
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpPenalty { config, out_dir } => {
            let cfg = commands::load_config(config.as_deref(), overrides)?;
            let n = commands::cmd_dump_penalty(&cfg, &out_dir)?;
            eprintln!("wrote {n} components to {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn level_override(overrides: &[String]) -> Result<Option<f64>, CliError> {
    if overrides.is_empty() {
        return Ok(None);
    }
    let mut raw = adapspline_cli::config::RawConfig::default();
    raw.apply_flags(overrides)?;
    match raw.get("level") {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|l| *l > 0.0 && *l < 1.0)
            .map(Some)
            .ok_or_else(|| CliError::Input(format!("level must be in (0, 1), got '{v}'"))),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(1);
        }
    };
    match run(cli, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
