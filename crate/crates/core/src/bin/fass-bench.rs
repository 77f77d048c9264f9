//! Runs one join-latency benchmark cell and writes its samples.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use fass::bench::{run_condition, BenchConfig, BenchError, Condition, Summary, DEFAULT_JOBS, DEFAULT_SEED, HARNESS_QUEUE_SIZE};
use fass::executor::RunError;
use fass::pubsub::PubSubError;
use fass::time::ClockMode;
use fass::trace::{write_samples_csv, SampleRow};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DEADLOCK: u8 = 3;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CondArg {
    Fass,
    Exact,
    Approx,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClockArg {
    Virtual,
    Wall,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Fork-join join-latency benchmark.
#[derive(Debug, Parser)]
#[command(name = "fass-bench", version)]
struct Args {
    #[arg(long, value_enum)]
    condition: CondArg,
    /// Matching tolerance, required for `approx`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_interval_ms: Option<u64>,
    /// Number of parallel workers between source and sink.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = DEFAULT_JOBS)]
    jobs: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value = "virtual")]
    clock: ClockArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads; defaults to n + 2.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = HARNESS_QUEUE_SIZE)]
    queue_size: usize,
    #[arg(long)]
    verbose: bool,
}

#[derive(Serialize)]
struct JsonOut<'a> {
    summary: &'a Summary,
    samples: &'a [SampleRow],
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if args.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let condition = match (args.condition, args.max_interval_ms) {
        (CondArg::Fass, None) => Condition::Fass,
        (CondArg::Exact, None) => Condition::Exact,
        (CondArg::Approx, Some(ms)) => Condition::Approx { max_interval_ms: ms },
        (CondArg::Approx, None) => {
            eprintln!("error: --condition approx requires --max-interval-ms");
            return ExitCode::from(EXIT_USAGE);
        }
        (_, Some(_)) => {
            eprintln!("error: --max-interval-ms only applies to --condition approx");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let cfg = BenchConfig {
        n: args.n as usize,
        jobs: args.jobs,
        seed: args.seed,
        clock: match args.clock {
            ClockArg::Virtual => ClockMode::Virtual,
            ClockArg::Wall => ClockMode::Wall,
        },
        workers: args.workers,
        queue_size: args.queue_size,
        verbose: args.verbose,
    };

    let cell = match run_condition(condition, &cfg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if let BenchError::Run(RunError::Deadlock(d)) = &e {
                for b in &d.blocked {
                    eprintln!("  {b}");
                }
            }
            return ExitCode::from(exit_code(&e));
        }
    };

    let s = &cell.summary.stats;
    log::info!(
        "{condition} n={} matched={}/{} mean={:?} p95={:?}",
        cfg.n,
        s.count,
        cfg.jobs,
        s.mean,
        s.p95
    );

    let result = match &args.out {
        Some(path) => File::create(path).map_err(|e| e.to_string()).and_then(|f| write_out(&cell.rows, &cell.summary, args.format, f)),
        None => write_out(&cell.rows, &cell.summary, args.format, io::stdout().lock()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: writing output: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_out<W: Write>(rows: &[SampleRow], summary: &Summary, format: Format, mut w: W) -> Result<(), String> {
    match format {
        Format::Csv => write_samples_csv(rows, w).map_err(|e| e.to_string()),
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &JsonOut { summary, samples: rows }).map_err(|e| e.to_string())?;
            writeln!(w).map_err(|e| e.to_string())
        }
    }
}

fn exit_code(e: &BenchError) -> u8 {
    match e {
        BenchError::Run(RunError::Deadlock(_)) => EXIT_DEADLOCK,
        BenchError::Registration(_)
        | BenchError::Commit(_)
        | BenchError::Run(RunError::InvalidConfig(_))
        | BenchError::PubSub(PubSubError::Graph(_) | PubSubError::Sync(_) | PubSubError::InvalidConfig(_)) => EXIT_INVALID,
        _ => 1,
    }
}
