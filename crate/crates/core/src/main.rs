use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use byzfl::harness::{parse_config, run_experiment, sweep_to_dir, write_csv, Grid};
use byzfl::selftest;

#[derive(Parser)]
#[command(name = "byzfl", version, about = "Byzantine-robust federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's out_path, then ".")
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Cartesian product of a grid over a base config
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks
    Selftest,
}

fn run(cli: Cli) -> byzfl::Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            let dir = out.or_else(|| cfg.out_path.clone()).unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir).map_err(|e| byzfl::Error::Io { path: dir.clone(), source: e })?;
            let outcome = run_experiment(&cfg)?;
            let path = dir.join("metrics.csv");
            write_csv(&outcome.metrics, &path)?;
            match outcome.final_accuracy() {
                Some(acc) => println!("final test accuracy {acc:.4}; wrote {}", path.display()),
                None => println!("no rounds run; wrote {}", path.display()),
            }
            Ok(true)
        }
        Command::Sweep { config, grid, out } => {
            let cfg = parse_config(&config)?;
            let grid = Grid::parse(&grid)?;
            let dir = out.or_else(|| cfg.out_path.clone()).unwrap_or_else(|| PathBuf::from("."));
            let rows = sweep_to_dir(&cfg, &grid, &dir)?;
            for row in &rows {
                match row.final_test_accuracy {
                    Some(acc) => println!("cell {:3}  {:.4}  {}", row.cell, acc, row.label),
                    None => println!("cell {:3}  error   {}  ({})", row.cell, row.label, row.error),
                }
            }
            println!("wrote {}", dir.join("summary.csv").display());
            Ok(rows.iter().all(|r| r.error.is_empty()))
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
