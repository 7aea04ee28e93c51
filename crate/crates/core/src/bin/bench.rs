//! Closed-loop pendulum benchmark CLI.
//!
//! ```text
//! bench run --config <file> --out <dir>
//! bench contraction --config <file> --out <dir>
//! bench list-variants --config <file>
//! ```
//!
//! Exit code 0 on success, 2 when at least one variant failed, 1 on
//! configuration or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gnrk::bench::{run_benchmark_matrix, run_contraction, write_contraction_csv, BenchConfig};

#[derive(Parser)]
#[command(name = "bench", about = "GNRK closed-loop pendulum benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant and write results.csv, trajectories.csv and contraction.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run only the contraction experiment and write contraction.csv.
    Contraction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the configured variants.
    ListVariants {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> gnrk::Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = BenchConfig::load(&config)?;
            let output = run_benchmark_matrix(&cfg);
            output.write_all(&out)?;
            for o in &output.outcomes {
                eprintln!("{:<6} {:>12.3} %  {}", o.id, o.rel_subopt_pct, o.status());
            }
            for (id, theta0, reason) in &output.contraction_failures {
                eprintln!("contraction {id} theta0={theta0}: {reason}");
            }
            Ok(!output.has_failures())
        }
        Command::Contraction { config, out } => {
            let cfg = BenchConfig::load(&config)?;
            let (rows, failures) = run_contraction(&cfg);
            std::fs::create_dir_all(&out)?;
            write_contraction_csv(&out.join("contraction.csv"), &rows)?;
            for (id, theta0, reason) in &failures {
                eprintln!("contraction {id} theta0={theta0}: {reason}");
            }
            Ok(failures.is_empty())
        }
        Command::ListVariants { config } => {
            let cfg = BenchConfig::load(&config)?;
            for v in &cfg.variants {
                let mark = if v.id == cfg.scenario.baseline { " (baseline)" } else { "" };
                println!("{}\t{}{mark}", v.id, v.describe());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
