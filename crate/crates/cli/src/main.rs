use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satwave::{analyze, exit_code, parse_interval, simulate, sweep, validate, AnalyzeOptions, ExperimentConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "satwave", version, about = "Wave equation with saturated boundary feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions of a config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a config and write a run directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze a finished run directory.
    Analyze {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        r: Option<f64>,
        /// Fit window T0:T1.
        #[arg(long, value_parser = parse_interval)]
        window: Option<(f64, f64)>,
        /// Multiplier interval T1:T2.
        #[arg(long, value_parser = parse_interval)]
        tau: Option<(f64, f64)>,
        #[arg(long)]
        svg: bool,
    },
    /// Run a grid of config overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = validate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| satwave::UsageError("no --out given and the config has no output_dir".into()))?;
            let manifest = simulate(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(if manifest.succeeded() { 0 } else { 1 })
        }
        Command::Analyze { run_dir, out, r, window, tau, svg } => {
            let report = analyze(&run_dir, &AnalyzeOptions { out, r, window, tau, svg })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Sweep { config, out, jobs } => {
            let (spec, base) = SweepConfig::load(&config)?;
            let rows = sweep(&spec, &base, &out, jobs)?;
            let failed = rows.iter().filter(|r| !r.ok).count();
            eprintln!("{} runs, {failed} failed", rows.len());
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
