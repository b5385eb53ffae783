use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ares_core::history::{ExecutionLog, RunStatus};
use ares_core::runner;
use ares_core::scenario::Scenario;
use ares_core::trace;
use ares_core::verify;
use clap::{Parser, Subcommand};

/// Simulate, verify and inspect reconfigurable shared-memory executions.
#[derive(Parser)]
#[command(name = "ares", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and check the resulting history.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace log path [default: <scenario>.trace.jsonl].
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Operation log path [default: <scenario>.ops.jsonl].
        #[arg(long)]
        ops: Option<PathBuf>,
        /// Checker report path [default: <scenario>.report.json].
        #[arg(long)]
        report: Option<PathBuf>,
        /// Skip the checkers.
        #[arg(long)]
        no_verify: bool,
    },
    /// Run the checkers over a recorded operation log.
    Verify {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Aggregate a trace log per operation and phase.
    Summarize {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

const CHECK_FAILED: u8 = 1;
const INPUT_ERROR: u8 = 2;

struct Failure(u8, String);

fn input<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure(INPUT_ERROR, format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(input(path))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure(INPUT_ERROR, format!("cannot write {}: {e}", path.display())))
}

fn default_path(scenario: &Path, suffix: &str) -> PathBuf {
    let stem = scenario.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from(format!("{stem}.{suffix}"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { scenario: path, seed, trace, ops, report, no_verify } => {
            let mut scenario = Scenario::parse(&read(&path)?).map_err(input(&path))?;
            if let Some(seed) = seed {
                scenario.net.seed = seed;
            }
            let result = runner::run(&scenario);
            let outcome = result.outcome().clone();
            write(&trace.unwrap_or_else(|| default_path(&path, "trace.jsonl")), &result.trace_jsonl())?;
            write(&ops.unwrap_or_else(|| default_path(&path, "ops.jsonl")), &result.ops_jsonl())?;
            println!(
                "{:?} at tick {} after {} events, {} operations, {} proposals",
                outcome.status,
                outcome.end_tick,
                outcome.events,
                result.log.ops.len(),
                outcome.proposals
            );
            for w in &outcome.waiting {
                println!("  waiting: {w}");
            }
            if no_verify {
                return if outcome.status == RunStatus::Quiescent {
                    Ok(())
                } else {
                    Err(Failure(CHECK_FAILED, format!("run ended {:?}", outcome.status)))
                };
            }
            let rep = result.verify();
            write(&report.unwrap_or_else(|| default_path(&path, "report.json")), &rep.to_json())?;
            print!("{}", rep.render());
            if rep.passed() {
                Ok(())
            } else {
                Err(Failure(CHECK_FAILED, "checks failed".into()))
            }
        }
        Command::Verify { log, json } => {
            let parsed = ExecutionLog::from_jsonl(&read(&log)?)
                .map_err(|e| Failure(INPUT_ERROR, format!("{}:{}: {}", log.display(), e.line, e.message)))?;
            let rep = verify::verify(&parsed);
            if json {
                println!("{}", rep.to_json());
            } else {
                print!("{}", rep.render());
            }
            if rep.passed() {
                Ok(())
            } else {
                Err(Failure(CHECK_FAILED, "checks failed".into()))
            }
        }
        Command::Summarize { trace: path, json } => {
            let spans = trace::parse_jsonl(&read(&path)?)
                .map_err(|e| Failure(INPUT_ERROR, format!("{}:{}: {}", path.display(), e.line, e.message)))?;
            for problem in trace::check_nesting(&spans) {
                eprintln!("warning: {problem}");
            }
            let summary = trace::summarize(&spans);
            if json {
                println!("{}", summary.to_json());
            } else {
                print!("{}", summary.table());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, message)) => {
            eprintln!("ares: {message}");
            ExitCode::from(code)
        }
    }
}
