use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use bvc_cli::{cmd_replay, cmd_run, cmd_stats, RunOptions, OUT_DIR_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bvc",
    version,
    about = "Run, replay and summarize bounded vector clock simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenario files and write one trace and one stats file each.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Override the scheduler and workload seed, and the transient fault seed when the plan has one.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, help = format!("Output directory [default: ${OUT_DIR_ENV}, else ./bvc-out]"))]
        out: Option<PathBuf>,
        /// `all`, `none` or a comma-separated list of check names.
        #[arg(long)]
        checks: Option<String>,
        /// Scenarios run at the same time.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-simulate a trace from its header and compare it byte for byte.
    Replay { trace: PathBuf },
    /// Print the statistics of a trace.
    Stats { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                bvc_cli::EXIT_CONFIG as u8
            } else {
                0
            });
        }
    };
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let code = match cli.command {
        Command::Run {
            scenarios,
            seed,
            steps,
            out: dir,
            checks,
            jobs,
        } => {
            let opts = RunOptions {
                seed,
                steps,
                out: dir,
                checks,
                jobs,
            };
            cmd_run(&scenarios, &opts, &mut out, &mut err)
        }
        Command::Replay { trace } => cmd_replay(&trace, &mut out, &mut err),
        Command::Stats { trace } => cmd_stats(&trace, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
