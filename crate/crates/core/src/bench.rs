//! Fork–join join-latency benchmark.
//!
//! One source fans out to `n` workers whose outputs meet at one sink. The
//! same graph is run under the FasS runtime and under the pub/sub baseline
//! with exact or approximate timestamp matching. All conditions of one
//! `(n, seed)` replay the same pre-drawn worker durations.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::builder::{create_dag, finish_create_dags, CommitError, DagBuilder, RegistrationError, SubtaskFn};
use crate::executor::{self, ExecTimeSource, RunError, RunLimit, RuntimeConfig};
use crate::model::{Attributes, DagId, JobIndex, SubtaskId, SubtaskKind, TypeTag, Value};
use crate::pubsub::{
    relay_callback, run_pubsub, sink_callback, source_callback, NodeSpec, PubSubError, PubSubGraph,
    StampPolicy, SyncPolicy, Trigger,
};
use crate::time::{ClockMode, DurationNs};
use crate::trace::{join_latencies, RunReport, SampleLabel, SampleRow, TraceError};

pub const PERIOD: DurationNs = DurationNs::from_millis(25);
pub const MIN_EXEC: DurationNs = DurationNs::from_millis(1);
pub const MAX_EXEC: DurationNs = DurationNs::from_millis(50);
/// Execution time of the source and the sink.
pub const ENDPOINT_EXEC: DurationNs = DurationNs::from_millis(1);
/// Synchronizer depth used by the harness. Deep enough that a worker
/// lagging by many periods does not push matching messages out.
pub const HARNESS_QUEUE_SIZE: usize = 64;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_JOBS: u64 = 500;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub n: usize,
    pub period: DurationNs,
    pub min_exec: DurationNs,
    pub max_exec: DurationNs,
    pub jobs: u64,
    pub seed: u64,
}

impl Workload {
    pub fn new(n: usize, jobs: u64, seed: u64) -> Self {
        Workload {
            n,
            period: PERIOD,
            min_exec: MIN_EXEC,
            max_exec: MAX_EXEC,
            jobs,
            seed,
        }
    }
}

/// Worker durations per `(worker, job)`, drawn uniformly in whole
/// nanoseconds. Source and sink always take [`ENDPOINT_EXEC`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationTable {
    n: usize,
    workers: Vec<Vec<DurationNs>>,
}

impl DurationTable {
    /// Draws worker 1's durations for every job, then worker 2's, and so on.
    pub fn generate(w: &Workload) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(w.seed);
        let (lo, hi) = (w.min_exec.as_nanos(), w.max_exec.as_nanos());
        let workers = (0..w.n)
            .map(|_| {
                (0..w.jobs)
                    .map(|_| DurationNs::from_nanos(rng.gen_range(lo..=hi)))
                    .collect()
            })
            .collect();
        DurationTable { n: w.n, workers }
    }

    /// Duration of `subtask` (source 0, workers `1..=n`, sink `n+1`) in job `job`.
    pub fn get(&self, subtask: SubtaskId, job: JobIndex) -> Option<DurationNs> {
        let i = subtask.index();
        if i == 0 || i == self.n + 1 {
            return Some(ENDPOINT_EXEC);
        }
        self.workers.get(i - 1)?.get(usize::try_from(job.0).ok()?).copied()
    }

    pub fn worker(&self, i: usize) -> &[DurationNs] {
        &self.workers[i]
    }
}

impl ExecTimeSource for DurationTable {
    fn exec_time(&self, _dag: DagId, subtask: SubtaskId, job: JobIndex) -> Option<DurationNs> {
        self.get(subtask, job)
    }
}

/// Both descriptions of one fork–join graph plus their shared durations.
pub struct ForkJoin {
    pub fass: DagBuilder,
    pub pubsub: PubSubGraph,
    pub durations: Arc<DurationTable>,
}

fn src_topic(i: usize) -> String {
    format!("src_{i}")
}

fn worker_topic(i: usize) -> String {
    format!("w_{i}")
}

/// Builds the fork–join graph for `w.n` workers. Subtask ids are the same in
/// both descriptions: source 0, worker `i` at `i+1`, sink `n+1`.
pub fn build_forkjoin(w: &Workload) -> Result<ForkJoin, RegistrationError> {
    assert!(w.n >= 1, "fork-join needs at least one worker");
    let n = w.n;
    let tag = TypeTag::of::<u64>();
    let src: Vec<String> = (0..n).map(src_topic).collect();
    let out: Vec<String> = (0..n).map(worker_topic).collect();
    let typed = |names: &[String]| -> Vec<(String, TypeTag)> { names.iter().map(|t| (t.clone(), tag)).collect() };

    let mut dag = create_dag();
    let fan: SubtaskFn = Arc::new(move |_| (0..n).map(|_| Value::new(0u64)).collect());
    let src_typed = typed(&src);
    dag.register_untyped(
        SubtaskKind::Source,
        fan,
        &[],
        &as_refs(&src_typed),
        Some(w.period),
        Attributes::default().exec_time(ENDPOINT_EXEC).named("source"),
    )?;
    for i in 0..n {
        dag.register_subtask::<_, (u64,), (u64,)>(
            |x| x,
            vec![&src[i]],
            vec![&out[i]],
            Attributes::default().named(format!("worker{}", i + 1)),
        )?;
    }
    let out_typed = typed(&out);
    let sink: SubtaskFn = Arc::new(|_| Vec::new());
    dag.register_untyped(
        SubtaskKind::Sink,
        sink,
        &as_refs(&out_typed),
        &[],
        None,
        Attributes::default().exec_time(ENDPOINT_EXEC).named("sink"),
    )?;

    let mut graph = PubSubGraph::new();
    graph.add_node(
        NodeSpec::new(
            "source",
            Trigger::Timer { period: w.period },
            src.iter().map(String::as_str).collect(),
            source_callback(src.clone()),
        )
        .exec_time(ENDPOINT_EXEC),
    );
    for i in 0..n {
        graph.add_node(NodeSpec::new(
            format!("worker{}", i + 1),
            Trigger::Subscription { topic: src[i].clone() },
            vec![&out[i]],
            relay_callback(out[i].clone()),
        ));
    }
    graph.add_node(
        NodeSpec::new("sink", Trigger::Synchronized { topics: out.clone() }, vec![], sink_callback())
            .exec_time(ENDPOINT_EXEC),
    );

    Ok(ForkJoin {
        fass: dag,
        pubsub: graph,
        durations: Arc::new(DurationTable::generate(w)),
    })
}

fn as_refs(v: &[(String, TypeTag)]) -> Vec<(&str, TypeTag)> {
    v.iter().map(|(s, t)| (s.as_str(), *t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Fass,
    Exact,
    Approx { max_interval_ms: u64 },
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Fass => "fass",
            Condition::Exact => "exact",
            Condition::Approx { .. } => "approx",
        }
    }

    pub fn max_interval_ms(self) -> Option<u64> {
        match self {
            Condition::Approx { max_interval_ms } => Some(max_interval_ms),
            _ => None,
        }
    }

    /// The five conditions of the comparison.
    pub fn matrix() -> [Condition; 5] {
        [
            Condition::Fass,
            Condition::Exact,
            Condition::Approx { max_interval_ms: 10 },
            Condition::Approx { max_interval_ms: 30 },
            Condition::Approx { max_interval_ms: 50 },
        ]
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max_interval_ms() {
            Some(ms) => write!(f, "{}{ms}", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub n: usize,
    pub jobs: u64,
    pub seed: u64,
    pub clock: ClockMode,
    /// Defaults to `n + 2`, so no subtask ever waits for a worker.
    pub workers: Option<usize>,
    pub queue_size: usize,
    pub verbose: bool,
}

impl BenchConfig {
    pub fn new(n: usize, jobs: u64, seed: u64) -> Self {
        BenchConfig {
            n,
            jobs,
            seed,
            clock: ClockMode::Virtual,
            workers: None,
            queue_size: HARNESS_QUEUE_SIZE,
            verbose: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("registration failed: {0}")]
    Registration(#[from] RegistrationError),
    #[error("commit failed: {0}")]
    Commit(#[from] CommitError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    PubSub(#[from] PubSubError),
    #[error("trace lacks events for the join metric: {0}")]
    MissingEvents(TraceError),
}

/// One latency per joined job: the join becoming ready minus the latest
/// publish among its inputs for that job.
pub fn measure_join_latency(report: &RunReport) -> Result<Vec<(JobIndex, DurationNs)>, BenchError> {
    let samples = join_latencies(report).map_err(BenchError::MissingEvents)?;
    Ok(samples.into_iter().map(|s| (s.job, s.latency)).collect())
}

/// Order statistics over matched samples, in nanoseconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: Option<f64>,
    /// Mean of the two middle values for an even count.
    pub median: Option<f64>,
    /// Nearest-rank 95th percentile.
    pub p95: Option<u64>,
    pub max: Option<u64>,
    /// Matched samples over expected joins; 0 when nothing was expected.
    pub match_rate: f64,
}

pub fn summarize(latencies_ns: &[u64], expected: u64) -> Stats {
    let mut v = latencies_ns.to_vec();
    v.sort_unstable();
    let count = v.len();
    let match_rate = if expected == 0 {
        0.0
    } else {
        count as f64 / expected as f64
    };
    if count == 0 {
        return Stats {
            count,
            mean: None,
            median: None,
            p95: None,
            max: None,
            match_rate,
        };
    }
    let sum: u128 = v.iter().map(|&x| u128::from(x)).sum();
    let median = if count % 2 == 1 {
        v[count / 2] as f64
    } else {
        (v[count / 2 - 1] as f64 + v[count / 2] as f64) / 2.0
    };
    let rank = (count * 95).div_ceil(100).max(1);
    Stats {
        count,
        mean: Some(sum as f64 / count as f64),
        median: Some(median),
        p95: Some(v[rank - 1]),
        max: v.last().copied(),
        match_rate,
    }
}

/// Summary of one `(condition, n)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub condition: String,
    pub n: usize,
    pub max_interval_ms: Option<u64>,
    pub jobs: u64,
    pub seed: u64,
    pub clock: ClockMode,
    #[serde(flatten)]
    pub stats: Stats,
    pub drops: u64,
}

pub struct CellResult {
    pub rows: Vec<SampleRow>,
    pub summary: Summary,
    pub report: RunReport,
}

/// Runs one condition on a freshly built fork–join graph.
pub fn run_condition(cond: Condition, cfg: &BenchConfig) -> Result<CellResult, BenchError> {
    let workload = Workload::new(cfg.n, cfg.jobs, cfg.seed);
    let fj = build_forkjoin(&workload)?;
    let runtime = RuntimeConfig {
        workers: cfg.workers.unwrap_or(cfg.n + 2),
        clock: cfg.clock,
        limit: RunLimit::Jobs(cfg.jobs),
        seed: cfg.seed,
        exec_times: Some(fj.durations.clone()),
        verbose: cfg.verbose,
        ..RuntimeConfig::default()
    };
    let report = match cond {
        Condition::Fass => {
            let dags = finish_create_dags(&mut [fj.fass])?;
            executor::run(&dags, runtime)?
        }
        Condition::Exact => run_pubsub(
            &fj.pubsub,
            SyncPolicy::exact().with_queue_size(cfg.queue_size),
            StampPolicy::Propagate,
            &runtime,
        )?,
        Condition::Approx { max_interval_ms } => run_pubsub(
            &fj.pubsub,
            SyncPolicy::approximate(DurationNs::from_millis(max_interval_ms)).with_queue_size(cfg.queue_size),
            StampPolicy::Restamp,
            &runtime,
        )?,
    };

    let label = SampleLabel {
        condition: cond.name().to_string(),
        n: cfg.n,
        max_interval_ms: cond.max_interval_ms(),
    };
    let samples = measure_join_latency(&report)?;
    let mut rows: Vec<SampleRow> = samples
        .iter()
        .map(|(job, lat)| SampleRow {
            condition: label.condition.clone(),
            n: label.n,
            max_interval_ms: label.max_interval_ms,
            job: job.0,
            latency_ns: Some(lat.as_nanos()),
            matched: true,
        })
        .collect();
    // A single-worker graph has no join, so nothing is expected to match.
    let expected = if cfg.n > 1 { cfg.jobs } else { 0 };
    for job in samples.len() as u64..expected {
        rows.push(SampleRow {
            condition: label.condition.clone(),
            n: label.n,
            max_interval_ms: label.max_interval_ms,
            job,
            latency_ns: None,
            matched: false,
        });
    }
    let latencies: Vec<u64> = samples.iter().map(|(_, l)| l.as_nanos()).collect();
    let summary = Summary {
        condition: label.condition,
        n: cfg.n,
        max_interval_ms: label.max_interval_ms,
        jobs: cfg.jobs,
        seed: cfg.seed,
        clock: cfg.clock,
        stats: summarize(&latencies, expected),
        drops: report.metrics.drops,
    };
    Ok(CellResult { rows, summary, report })
}
