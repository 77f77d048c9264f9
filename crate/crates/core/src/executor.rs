//! Runs committed DAGs.
//!
//! Every subtask gets the control loop of a generated FasS task: wait on its
//! join gate for one message per input of the next job, call the function,
//! and release all outputs at once through its fanout. Sources are released
//! by period timers instead of a gate. A single dispatcher owns all loops and
//! hands activations to workers in static-priority order.
//!
//! In virtual time the run is a discrete-event simulation: a body executes
//! instantly and its finish is scheduled after the declared duration. In wall
//! time bodies run on a worker pool and busy-spin for the declared duration.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::builder::{CommittedDag, SubtaskFn};
use crate::channels::{snapshot, ChannelError, Fanout, JoinGate, SendOutcome, DEFAULT_QUEUE_CAPACITY};
use crate::dispatch::{ReadyQueue, Timeline, WorkerPool};
use crate::model::{DagId, JobIndex, SubtaskId, Value};
use crate::time::{spin_until, Clock, ClockMode, DurationNs, TimePoint, VirtualClock, WallClock};
use crate::trace::{
    job_records, join_latencies, Collector, EventKind, EventRecord, InFlight, Overrun, RunReport,
};

/// Per-activation execution durations, e.g. a pre-drawn workload table.
pub trait ExecTimeSource: Send + Sync {
    /// Duration of `subtask` in job `job`, or `None` to fall back to the
    /// subtask's declared execution time.
    fn exec_time(&self, dag: DagId, subtask: SubtaskId, job: JobIndex) -> Option<DurationNs>;
}

/// When a run stops releasing new jobs. Released jobs always drain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunLimit {
    /// Release jobs `0..n` of every DAG.
    Jobs(u64),
    /// Release jobs whose nominal release time is before this offset.
    Duration(DurationNs),
}

impl RunLimit {
    pub(crate) fn allows(self, job: u64, nominal: TimePoint) -> bool {
        match self {
            RunLimit::Jobs(n) => job < n,
            RunLimit::Duration(d) => nominal.as_nanos() < d.as_nanos(),
        }
    }
}

#[derive(Clone)]
pub struct RuntimeConfig {
    pub workers: usize,
    pub clock: ClockMode,
    pub limit: RunLimit,
    /// Seed of the workload that produced `exec_times`; kept for reports.
    pub seed: u64,
    pub queue_capacity: usize,
    pub exec_times: Option<Arc<dyn ExecTimeSource>>,
    /// Log every event as it is recorded.
    pub verbose: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            clock: ClockMode::Virtual,
            limit: RunLimit::Jobs(10),
            seed: 0,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            exec_times: None,
            verbose: false,
        }
    }
}

impl fmt::Debug for RuntimeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuntimeConfig")
            .field("workers", &self.workers)
            .field("clock", &self.clock)
            .field("limit", &self.limit)
            .field("seed", &self.seed)
            .field("queue_capacity", &self.queue_capacity)
            .field("exec_times", &self.exec_times.is_some())
            .field("verbose", &self.verbose)
            .finish()
    }
}

impl RuntimeConfig {
    pub(crate) fn check(&self) -> Result<(), RunError> {
        if self.workers == 0 {
            return Err(RunError::InvalidConfig("worker count must be at least 1".into()));
        }
        if self.queue_capacity == 0 {
            return Err(RunError::InvalidConfig("queue capacity must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn duration_of(
        &self,
        dag: DagId,
        subtask: SubtaskId,
        job: JobIndex,
        declared: DurationNs,
    ) -> DurationNs {
        self.exec_times
            .as_ref()
            .and_then(|s| s.exec_time(dag, subtask, job))
            .unwrap_or(declared)
    }
}

/// Where a subtask's control loop stood when a run stalled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockedSubtask {
    pub dag: DagId,
    pub subtask: String,
    pub state: String,
    /// Next job the join gate waits for.
    pub expected: Option<JobIndex>,
    /// Queued job indices per input topic.
    pub queued: Vec<(String, Vec<JobIndex>)>,
}

impl fmt::Display for BlockedSubtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} {}", self.dag, self.subtask, self.state)?;
        if let Some(k) = self.expected {
            write!(f, " expects job {k}")?;
        }
        for (topic, jobs) in &self.queued {
            let jobs: Vec<String> = jobs.iter().map(ToString::to_string).collect();
            write!(f, " {topic}=[{}]", jobs.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Deadlock {
    pub at: TimePoint,
    pub blocked: Vec<BlockedSubtask>,
    /// Everything recorded up to the stall.
    pub report: RunReport,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0} is already running")]
    AlreadyRunning(DagId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("deadlock at {}: {}", .0.at, describe_blocked(&.0.blocked))]
    Deadlock(Box<Deadlock>),
    #[error("{dag}/{subtask}: {source}")]
    Channel {
        dag: DagId,
        subtask: String,
        source: ChannelError,
    },
    #[error("{dag}/{subtask} panicked: {message}")]
    Panicked {
        dag: DagId,
        subtask: String,
        message: String,
    },
    #[error("invalid trace: {0}")]
    Trace(#[from] crate::trace::TraceError),
}

fn describe_blocked(blocked: &[BlockedSubtask]) -> String {
    blocked
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// A run in progress.
pub struct RunHandle {
    thread: JoinHandle<Result<RunReport, RunError>>,
}

impl RunHandle {
    pub fn is_finished(&self) -> bool {
        self.thread.is_finished()
    }
}

/// Starts executing `dags` on a dispatcher thread.
pub fn start(dags: &[CommittedDag], cfg: RuntimeConfig) -> Result<RunHandle, RunError> {
    cfg.check()?;
    let claims = Claims::take(dags)?;
    let thread = std::thread::Builder::new()
        .name("fass-dispatch".into())
        .spawn(move || {
            let _claims = claims;
            let engine = Engine::new(&_claims.0, &cfg);
            match cfg.clock {
                ClockMode::Virtual => engine.run_virtual(),
                ClockMode::Wall => engine.run_wall(),
            }
        })
        .expect("spawn dispatcher thread");
    Ok(RunHandle { thread })
}

/// Waits for the run to drain and returns its report.
pub fn run_to_completion(handle: RunHandle) -> Result<RunReport, RunError> {
    match handle.thread.join() {
        Ok(result) => result,
        Err(panic) => Err(RunError::Panicked {
            dag: DagId::from_raw(0),
            subtask: "dispatcher".into(),
            message: panic_message(panic.as_ref()),
        }),
    }
}

/// `start` followed by `run_to_completion`.
pub fn run(dags: &[CommittedDag], cfg: RuntimeConfig) -> Result<RunReport, RunError> {
    run_to_completion(start(dags, cfg)?)
}

/// Exclusive use of a set of DAGs for one run.
struct Claims(Vec<CommittedDag>);

impl Claims {
    fn take(dags: &[CommittedDag]) -> Result<Claims, RunError> {
        let mut held = Claims(Vec::with_capacity(dags.len()));
        for d in dags {
            if !d.try_claim() {
                return Err(RunError::AlreadyRunning(d.id()));
            }
            held.0.push(d.clone());
        }
        Ok(held)
    }
}

impl Drop for Claims {
    fn drop(&mut self) {
        for d in &self.0 {
            d.unclaim();
        }
    }
}

pub(crate) fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic".into()
    }
}

fn call_body(f: &SubtaskFn, values: &[Value]) -> Result<Vec<Value>, String> {
    catch_unwind(AssertUnwindSafe(|| f(values))).map_err(|p| panic_message(p.as_ref()))
}

#[derive(Debug)]
enum Phase {
    Idle,
    Queued,
    Running,
    /// Finished but some output queue is full.
    Blocked {
        job: JobIndex,
        outputs: Vec<Value>,
        finish: TimePoint,
    },
}

struct Node {
    id: SubtaskId,
    name: String,
    priority: i32,
    declared: DurationNs,
    func: SubtaskFn,
    gate: Option<JoinGate>,
    fanout: Fanout,
    out_names: Vec<String>,
    phase: Phase,
    is_join: bool,
    is_sink: bool,
}

struct DagRun {
    id: DagId,
    nodes: Vec<Node>,
    source: usize,
    sink_count: usize,
    period: DurationNs,
    next_job: u64,
    next_nominal: TimePoint,
    armed: bool,
    /// Releases held back while the source is still busy with an earlier job.
    deferred: VecDeque<(JobIndex, TimePoint)>,
    released: u64,
    sinks_done: BTreeMap<JobIndex, usize>,
}

impl DagRun {
    fn new(dag: &CommittedDag, capacity: usize) -> DagRun {
        let subtasks = dag.subtasks();
        let mut gates: Vec<Option<JoinGate>> = subtasks
            .iter()
            .map(|s| (!s.in_topics().is_empty()).then(|| JoinGate::new(s.in_topics().to_vec(), capacity)))
            .collect();
        let mut fanouts: Vec<Fanout> = subtasks
            .iter()
            .map(|s| Fanout::new(s.out_topics().to_vec()))
            .collect();
        for e in dag.edges() {
            let from = &subtasks[e.from.index()];
            let to = &subtasks[e.to.index()];
            let out = from
                .out_topics()
                .iter()
                .position(|t| t.name() == e.topic)
                .expect("edge topic is an output");
            let input = to
                .in_topics()
                .iter()
                .position(|t| t.name() == e.topic)
                .expect("edge topic is an input");
            let queue = gates[e.to.index()].as_ref().expect("subscriber has a gate").input(input);
            fanouts[e.from.index()].subscribe(out, queue);
        }
        let nodes = subtasks
            .iter()
            .zip(gates.drain(..))
            .zip(fanouts)
            .map(|((s, gate), fanout)| Node {
                id: s.id(),
                name: s.name().to_string(),
                priority: s.priority(),
                declared: s.attributes().exec_time,
                func: Arc::clone(dag.function(s.id())),
                gate,
                fanout,
                out_names: s.out_topics().iter().map(|t| t.name().to_string()).collect(),
                phase: Phase::Idle,
                is_join: s.in_topics().len() > 1,
                is_sink: dag.sinks().contains(&s.id()),
            })
            .collect();
        DagRun {
            id: dag.id(),
            nodes,
            source: dag.source().index(),
            sink_count: dag.sinks().len(),
            period: dag.period(),
            next_job: 0,
            next_nominal: TimePoint::ZERO,
            armed: false,
            deferred: VecDeque::new(),
            released: 0,
            sinks_done: BTreeMap::new(),
        }
    }

    fn incomplete(&self) -> Vec<JobIndex> {
        (0..self.released)
            .map(JobIndex)
            .filter(|k| self.sinks_done.get(k).copied().unwrap_or(0) < self.sink_count)
            .collect()
    }
}

/// An activation handed to a worker.
struct Dispatch {
    dag: usize,
    node: usize,
    job: JobIndex,
    values: Vec<Value>,
    exec: DurationNs,
    func: SubtaskFn,
}

struct Activation {
    dag: usize,
    node: usize,
    job: JobIndex,
    values: Vec<Value>,
}

struct Engine {
    dags: Vec<DagRun>,
    infos: Vec<crate::trace::DagInfo>,
    cfg: RuntimeConfig,
    ready: ReadyQueue<Activation>,
    free_workers: usize,
    collector: Collector,
    overruns: Vec<Overrun>,
    max_jitter: DurationNs,
}

impl Engine {
    fn new(dags: &[CommittedDag], cfg: &RuntimeConfig) -> Engine {
        Engine {
            dags: dags.iter().map(|d| DagRun::new(d, cfg.queue_capacity)).collect(),
            infos: dags.iter().map(CommittedDag::info).collect(),
            cfg: cfg.clone(),
            ready: ReadyQueue::new(),
            free_workers: cfg.workers,
            collector: Collector::new(cfg.verbose),
            overruns: Vec::new(),
            max_jitter: DurationNs::ZERO,
        }
    }

    fn record(&self, kind: EventKind, d: usize, node: usize, job: JobIndex, t: TimePoint) {
        let dag = &self.dags[d];
        self.collector
            .record(EventRecord::new(kind, dag.id, dag.nodes[node].id, job, t));
    }

    /// Arms the next release timer of every DAG that still has one.
    fn arm_all(&mut self) {
        for dag in &mut self.dags {
            dag.armed = self.cfg.limit.allows(dag.next_job, dag.next_nominal);
        }
    }

    fn next_timer(&self) -> Option<(TimePoint, usize)> {
        self.dags
            .iter()
            .enumerate()
            .filter(|(_, d)| d.armed)
            .map(|(i, d)| (d.next_nominal, i))
            .min()
    }

    /// Handles the expiry of `d`'s release timer, observed at `now`.
    fn on_timer(&mut self, d: usize, now: TimePoint) {
        let dag = &mut self.dags[d];
        let job = JobIndex(dag.next_job);
        let nominal = dag.next_nominal;
        self.max_jitter = self.max_jitter.max(now.saturating_duration_since(nominal));
        dag.next_job += 1;
        dag.next_nominal = nominal + dag.period;
        dag.armed = self.cfg.limit.allows(dag.next_job, dag.next_nominal);

        let source_busy = !matches!(dag.nodes[dag.source].phase, Phase::Idle);
        if source_busy || !dag.deferred.is_empty() {
            log::warn!("{}: release of job {job} overruns the source", dag.id);
            dag.deferred.push_back((job, nominal));
        } else {
            self.release(d, job, nominal, now, false);
        }
    }

    fn release(&mut self, d: usize, job: JobIndex, nominal: TimePoint, now: TimePoint, deferred: bool) {
        let source = self.dags[d].source;
        self.record(EventKind::Release, d, source, job, now);
        let dag = &mut self.dags[d];
        if deferred {
            self.overruns.push(Overrun {
                dag: dag.id,
                job,
                nominal,
                released: now,
            });
        }
        dag.released += 1;
        let node = &mut dag.nodes[source];
        node.phase = Phase::Queued;
        self.ready.push(
            node.priority,
            now,
            (d, source),
            Activation {
                dag: d,
                node: source,
                job,
                values: Vec::new(),
            },
        );
    }

    fn on_finish(
        &mut self,
        d: usize,
        n: usize,
        job: JobIndex,
        outputs: Vec<Value>,
        finish: TimePoint,
        now: TimePoint,
    ) -> Result<(), RunError> {
        self.record(EventKind::Finish, d, n, job, finish);
        let dag = &mut self.dags[d];
        if dag.nodes[n].is_sink {
            *dag.sinks_done.entry(job).or_default() += 1;
        }
        dag.nodes[n].phase = Phase::Blocked {
            job,
            outputs,
            finish,
        };
        self.try_emit(d, n, now)?;
        Ok(())
    }

    /// Releases a finished activation's outputs if every destination has room.
    fn try_emit(&mut self, d: usize, n: usize, now: TimePoint) -> Result<bool, RunError> {
        let dag_id = self.dags[d].id;
        let node = &mut self.dags[d].nodes[n];
        let Phase::Blocked {
            job,
            outputs,
            finish,
        } = std::mem::replace(&mut node.phase, Phase::Idle)
        else {
            unreachable!("emit outside the blocked phase");
        };
        let outcome = node
            .fanout
            .try_send_all(job, outputs, finish, now)
            .map_err(|source| RunError::Channel {
                dag: dag_id,
                subtask: node.name.clone(),
                source,
            })?;
        match outcome {
            SendOutcome::Sent => {
                let dag = &self.dags[d];
                for topic in &dag.nodes[n].out_names {
                    self.collector.record(
                        EventRecord::new(EventKind::Publish, dag.id, dag.nodes[n].id, job, finish)
                            .on_topic(topic.clone()),
                    );
                }
                self.free_workers += 1;
                Ok(true)
            }
            SendOutcome::Full(outputs) => {
                self.dags[d].nodes[n].phase = Phase::Blocked {
                    job,
                    outputs,
                    finish,
                };
                Ok(false)
            }
        }
    }

    /// Moves every loop as far as it can at `now` and returns the
    /// activations to start.
    fn progress(&mut self, now: TimePoint) -> Result<Vec<Dispatch>, RunError> {
        let mut started = Vec::new();
        loop {
            let mut changed = false;
            for d in 0..self.dags.len() {
                for n in 0..self.dags[d].nodes.len() {
                    if matches!(self.dags[d].nodes[n].phase, Phase::Blocked { .. }) {
                        changed |= self.try_emit(d, n, now)?;
                    }
                }
                for n in 0..self.dags[d].nodes.len() {
                    changed |= self.poll_gate(d, n)?;
                }
                let dag = &mut self.dags[d];
                if matches!(dag.nodes[dag.source].phase, Phase::Idle) {
                    if let Some((job, nominal)) = dag.deferred.pop_front() {
                        self.release(d, job, nominal, now, true);
                        changed = true;
                    }
                }
            }
            while self.free_workers > 0 {
                let Some((_, a)) = self.ready.pop() else { break };
                self.free_workers -= 1;
                self.record(EventKind::Start, a.dag, a.node, a.job, now);
                let dag = &mut self.dags[a.dag];
                let node = &mut dag.nodes[a.node];
                node.phase = Phase::Running;
                started.push(Dispatch {
                    dag: a.dag,
                    node: a.node,
                    job: a.job,
                    exec: self.cfg.duration_of(dag.id, node.id, a.job, node.declared),
                    func: Arc::clone(&node.func),
                    values: a.values,
                });
                changed = true;
            }
            if !changed {
                return Ok(started);
            }
        }
    }

    fn poll_gate(&mut self, d: usize, n: usize) -> Result<bool, RunError> {
        let dag = &mut self.dags[d];
        let node = &mut dag.nodes[n];
        if !matches!(node.phase, Phase::Idle) {
            return Ok(false);
        }
        let Some(gate) = node.gate.as_mut() else {
            return Ok(false);
        };
        let joined = gate.try_recv_all().map_err(|source| RunError::Channel {
            dag: dag.id,
            subtask: node.name.clone(),
            source,
        })?;
        let Some(joined) = joined else {
            return Ok(false);
        };
        node.phase = Phase::Queued;
        let (priority, is_join) = (node.priority, node.is_join);
        if is_join {
            self.record(EventKind::JoinReady, d, n, joined.job, joined.ready_time);
        }
        self.ready.push(
            priority,
            joined.ready_time,
            (d, n),
            Activation {
                dag: d,
                node: n,
                job: joined.job,
                values: joined.values(),
            },
        );
        Ok(true)
    }

    fn done(&self) -> bool {
        self.dags.iter().all(|d| {
            !d.armed
                && d.deferred.is_empty()
                && d.incomplete().is_empty()
                && d.nodes.iter().all(|n| matches!(n.phase, Phase::Idle))
        })
    }

    fn blocked(&self) -> Vec<BlockedSubtask> {
        let mut out = Vec::new();
        for dag in &self.dags {
            for node in &dag.nodes {
                let queued = node
                    .gate
                    .as_ref()
                    .map(|g| {
                        g.inputs()
                            .iter()
                            .map(|q| q.topic().name().to_string())
                            .zip(snapshot(g.inputs()))
                            .collect()
                    })
                    .unwrap_or_default();
                out.push(BlockedSubtask {
                    dag: dag.id,
                    subtask: node.name.clone(),
                    state: match &node.phase {
                        Phase::Idle => "idle".into(),
                        Phase::Queued => "queued".into(),
                        Phase::Running => "running".into(),
                        Phase::Blocked { job, .. } => format!("blocked sending job {job}"),
                    },
                    expected: node.gate.as_ref().map(JoinGate::expected),
                    queued,
                });
            }
        }
        out
    }

    fn panicked(&self, d: usize, n: usize, message: String) -> RunError {
        RunError::Panicked {
            dag: self.dags[d].id,
            subtask: self.dags[d].nodes[n].name.clone(),
            message,
        }
    }

    fn into_report(self) -> Result<RunReport, RunError> {
        let in_flight = self
            .dags
            .iter()
            .flat_map(|d| d.incomplete().into_iter().map(|job| InFlight { dag: d.id, job }))
            .collect();
        let mut report = RunReport::new(self.infos);
        report.events = self.collector.into_events();
        report.metrics.jobs = job_records(&report);
        report.metrics.join_samples = join_latencies(&report)?;
        report.metrics.overruns = self.overruns;
        report.metrics.in_flight = in_flight;
        report.metrics.max_release_jitter = self.max_jitter;
        Ok(report)
    }

    fn deadlock(self, at: TimePoint) -> RunError {
        let blocked = self.blocked();
        let at_least = RunError::Deadlock(Box::new(Deadlock {
            at,
            blocked: blocked.clone(),
            report: RunReport::default(),
        }));
        match self.into_report() {
            Ok(report) => RunError::Deadlock(Box::new(Deadlock { at, blocked, report })),
            Err(_) => at_least,
        }
    }

    fn run_virtual(mut self) -> Result<RunReport, RunError> {
        enum Ev {
            Finish {
                dag: usize,
                node: usize,
                job: JobIndex,
                outputs: Vec<Value>,
            },
            Release(usize),
        }
        const FINISH: u8 = 0;
        const RELEASE: u8 = 1;

        let clock = VirtualClock::new();
        let mut timeline = Timeline::new();
        self.arm_all();
        for (i, d) in self.dags.iter().enumerate() {
            if d.armed {
                timeline.push(d.next_nominal, RELEASE, Ev::Release(i));
            }
        }

        loop {
            let now = clock.now();
            for s in self.progress(now)? {
                let outputs = call_body(&s.func, &s.values).map_err(|m| self.panicked(s.dag, s.node, m))?;
                timeline.push(
                    now + s.exec,
                    FINISH,
                    Ev::Finish {
                        dag: s.dag,
                        node: s.node,
                        job: s.job,
                        outputs,
                    },
                );
            }
            if self.done() {
                return self.into_report();
            }
            let Some((t, first)) = timeline.pop() else {
                return Err(self.deadlock(now));
            };
            clock.advance_to(t);
            let mut next = Some(first);
            while let Some(ev) = next {
                match ev {
                    Ev::Finish {
                        dag,
                        node,
                        job,
                        outputs,
                    } => self.on_finish(dag, node, job, outputs, t, t)?,
                    Ev::Release(d) => {
                        self.on_timer(d, t);
                        if self.dags[d].armed {
                            timeline.push(self.dags[d].next_nominal, RELEASE, Ev::Release(d));
                        }
                    }
                }
                next = timeline.pop_at(t);
            }
        }
    }

    fn run_wall(mut self) -> Result<RunReport, RunError> {
        struct Work {
            dag: usize,
            node: usize,
            job: JobIndex,
            values: Vec<Value>,
            func: SubtaskFn,
            deadline: TimePoint,
        }
        struct Done {
            dag: usize,
            node: usize,
            job: JobIndex,
            outputs: Result<Vec<Value>, String>,
            finish: TimePoint,
        }

        let clock = Arc::new(WallClock::new());
        let (tx, rx): (Sender<Done>, Receiver<Done>) = unbounded();
        let pool = {
            let clock = Arc::clone(&clock);
            WorkerPool::new(self.cfg.workers, move |w: Work| {
                let outputs = call_body(&w.func, &w.values);
                spin_until(&clock, w.deadline);
                let _ = tx.send(Done {
                    dag: w.dag,
                    node: w.node,
                    job: w.job,
                    outputs,
                    finish: clock.now(),
                });
            })
        };

        self.arm_all();
        let mut running = 0usize;
        loop {
            let now = clock.now();
            for s in self.progress(now)? {
                running += 1;
                pool.submit(Work {
                    dag: s.dag,
                    node: s.node,
                    job: s.job,
                    values: s.values,
                    func: s.func,
                    deadline: now + s.exec,
                });
            }
            if self.done() {
                drop(pool);
                return self.into_report();
            }
            let timer = self.next_timer();
            if running == 0 && timer.is_none() {
                drop(pool);
                return Err(self.deadlock(now));
            }

            let note = match timer {
                Some((at, _)) => match rx.recv_deadline(clock.instant_at(at).max(Instant::now())) {
                    Ok(done) => Some(done),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => unreachable!("pool holds a sender"),
                },
                None => Some(rx.recv().expect("pool holds a sender")),
            };
            if let Some(done) = note {
                running -= 1;
                let outputs = done
                    .outputs
                    .map_err(|m| self.panicked(done.dag, done.node, m))?;
                self.on_finish(done.dag, done.node, done.job, outputs, done.finish, clock.now())?;
            }
            let now = clock.now();
            while let Some((at, d)) = self.next_timer() {
                if at > now {
                    break;
                }
                self.on_timer(d, now);
            }
        }
    }
}
