use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use ticket_cli::report::DEFAULT_REPORT_ITERATION;
use ticket_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "ticket",
    version,
    about = "Lottery-ticket pruning under adversarial training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the experiment grid and write per-trial CSVs and checkpoints.
    Run {
        /// TOML config; built-in defaults (the full grid) when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set train.iterations_per_round=5000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Directory holding `<dataset>/` with the IDX files.
        #[arg(long, env = "TICKET_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Grid runs trained concurrently; each run is single-threaded.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Mean and sample std over trials for every CSV below RUN_DIR.
    Aggregate {
        run_dir: PathBuf,
        /// Output directory (defaults to RUN_DIR).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Density histograms of surviving initial weights.
    Histograms {
        /// A checkpoint file or a directory searched for `*.ckpt`.
        input: PathBuf,
        #[arg(short, long, default_value_t = 50)]
        bins: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// SVG accuracy, loss and early-stopping charts.
    Plot {
        run_dir: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Markdown accuracy and early-stopping tables.
    Report {
        run_dir: PathBuf,
        #[arg(short, long, default_value_t = DEFAULT_REPORT_ITERATION)]
        iteration: usize,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            mut overrides,
            out,
            data_dir,
            trials,
            seed,
            jobs,
            dry_run,
        } => {
            if let Some(t) = trials {
                overrides.push(format!("trials={t}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("base_seed={s}"));
            }
            let mut cfg = ExperimentConfig::load_with_overrides(config.as_deref(), &overrides)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            cfg.validate()?;
            if dry_run {
                print!("# config_hash = \"{}\"\n{}", cfg.hash(), cfg.to_toml());
                return Ok(());
            }
            let summary = ticket_cli::run_experiment(&cfg, jobs)?;
            info!(
                "{} of {} grid runs finished in {}",
                summary.total - summary.failures.len(),
                summary.total,
                summary.output_dir.display()
            );
            summary.into_result().map(|_| ())
        }
        Command::Aggregate { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.clone());
            for p in ticket_cli::write_aggregates(&run_dir, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Histograms { input, bins, out } => {
            for p in ticket_cli::export_histograms(&input, bins, out.as_deref())? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Plot { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("plots"));
            for p in ticket_cli::plot_run(&run_dir, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Report {
            run_dir,
            iteration,
            out,
        } => {
            let text = ticket_cli::report_run(&run_dir, iteration)?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| CliError::io(&p, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors count as config errors; --help and --version succeed.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
