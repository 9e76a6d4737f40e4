use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcnas::config;
use rcnas::format::parse_arch;
use rcnas::orchestrator::{self, RunOptions, SearchError};
use rcnas::report::{curve_csv, parse_log};

const EXIT_CONFIG: u8 = 2;
const EXIT_WORKER: u8 = 3;

#[derive(Parser)]
#[command(name = "rcnas", version, about = "Resource-constrained neural architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Policy-gradient search.
    Search(RunArgs),
    /// Random-action search with the same loop and log schema.
    RandomSearch(RunArgs),
    /// Print the resource report of an architecture file.
    Profile {
        #[arg(long)]
        arch: PathBuf,
    },
    /// Best-so-far curve and feasibility counts of a run log, as CSV.
    Report {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the run log, checkpoints and best models.
    #[arg(long, default_value = "rcnas-out")]
    out: PathBuf,
    /// Write a checkpoint every K episodes.
    #[arg(long, value_name = "K")]
    checkpoint_every: Option<usize>,
    /// Stop after this many completed episodes, leaving a checkpoint.
    #[arg(long, value_name = "E")]
    stop_after: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(args: RunArgs, random: bool) -> ExitCode {
    let resolved = match config::load(&args.config) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let options = RunOptions {
        out_dir: args.out,
        checkpoint_every: args.checkpoint_every,
        stop_after: args.stop_after,
        resume: args.resume,
    };
    let result = if random {
        orchestrator::run_random_search(&resolved, &options)
    } else {
        orchestrator::run_search(&resolved, &options)
    };
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e @ (SearchError::Attach(_) | SearchError::Worker(_))) => fail(EXIT_WORKER, e),
        Err(e @ SearchError::Config(_)) => fail(EXIT_CONFIG, e),
        Err(e) => fail(1, e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Search(a) => run(a, false),
        Cmd::RandomSearch(a) => run(a, true),
        Cmd::Profile { arch } => {
            let text = match fs::read_to_string(&arch) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", arch.display())),
            };
            let parsed = match parse_arch(&text) {
                Ok(a) => a,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let violations = parsed.validate();
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return fail(EXIT_CONFIG, format!("invalid architecture: {}", list.join(", ")));
            }
            let graph = match parsed.to_graph() {
                Ok(g) => g,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match rcnas::core::resource::report(&graph) {
                Ok(r) => {
                    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
        Cmd::Report { log } => {
            let text = match fs::read_to_string(&log) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", log.display())),
            };
            match parse_log(&text) {
                Ok(records) => {
                    print!("{}", curve_csv(&records));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_CONFIG, e),
            }
        }
    }
}
