//! Execution traces and the values derived from them.
//!
//! A [`RunReport`] is the ordered list of [`EventRecord`]s a run produced,
//! plus per-DAG structure (sinks, edges, join points) and derived metrics.
//! The query functions here recompute everything from the events, so they
//! work equally on hand-built traces.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DagId, Edge, JobIndex, SubtaskId};
use crate::time::{DurationNs, TimePoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Release,
    Start,
    Finish,
    Publish,
    /// A join gate has one message of the job on every input.
    JoinReady,
    /// A timestamp synchronizer emitted a matched set. `job` is the ordinal
    /// of the emission.
    Trigger,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub dag: DagId,
    pub subtask: SubtaskId,
    pub job: JobIndex,
    pub time: TimePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl EventRecord {
    pub fn new(
        kind: EventKind,
        dag: DagId,
        subtask: SubtaskId,
        job: JobIndex,
        time: TimePoint,
    ) -> Self {
        EventRecord {
            kind,
            dag,
            subtask,
            job,
            time,
            topic: None,
        }
    }

    pub fn on_topic(mut self, topic: impl Into<String>) -> Self {
        self.topic = Some(topic.into());
        self
    }
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} {} k={} {:?}",
            self.time.as_nanos(),
            self.dag,
            self.subtask,
            self.job,
            self.kind
        )?;
        if let Some(topic) = &self.topic {
            write!(f, " topic={topic}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinInput {
    pub producer: SubtaskId,
    pub topic: String,
}

/// A subtask whose activation waits on several inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinPoint {
    pub subtask: SubtaskId,
    pub inputs: Vec<JoinInput>,
}

/// Structure of one DAG, as needed to interpret its events.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DagInfo {
    pub id: Option<DagId>,
    pub names: Vec<String>,
    pub source: Option<SubtaskId>,
    pub sinks: Vec<SubtaskId>,
    pub edges: Vec<Edge>,
    pub joins: Vec<JoinPoint>,
    pub relative_deadline: Option<DurationNs>,
}

impl DagInfo {
    pub fn new(id: DagId) -> Self {
        DagInfo {
            id: Some(id),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JobRecord {
    pub dag: DagId,
    pub job: JobIndex,
    pub release: TimePoint,
    pub completion: Option<TimePoint>,
    pub deadline: Option<DurationNs>,
    pub deadline_met: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinSample {
    pub dag: DagId,
    pub subtask: SubtaskId,
    pub job: JobIndex,
    pub latency: DurationNs,
}

/// A source release that had to wait for the previous job's source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Overrun {
    pub dag: DagId,
    pub job: JobIndex,
    pub nominal: TimePoint,
    pub released: TimePoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InFlight {
    pub dag: DagId,
    pub job: JobIndex,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub jobs: Vec<JobRecord>,
    pub join_samples: Vec<JoinSample>,
    pub overruns: Vec<Overrun>,
    /// Messages evicted from bounded buffers.
    pub drops: u64,
    /// Matched sets emitted by timestamp synchronizers.
    pub triggers: u64,
    /// Released jobs that had not completed when the run stopped.
    pub in_flight: Vec<InFlight>,
    /// Largest gap between a nominal and an observed timer expiry.
    pub max_release_jitter: DurationNs,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub dags: Vec<DagInfo>,
    pub events: Vec<EventRecord>,
    pub metrics: Metrics,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("no DAG {0} in report")]
    UnknownDag(DagId),
    #[error("job {job} of {dag} is incomplete: sinks {missing:?} have not finished")]
    IncompleteJob {
        dag: DagId,
        job: JobIndex,
        missing: Vec<SubtaskId>,
    },
    #[error("job {job} of {dag} has no release event")]
    MissingRelease { dag: DagId, job: JobIndex },
    #[error("no publish of job {job} on {topic} by {producer} in {dag}")]
    MissingPublish {
        dag: DagId,
        producer: SubtaskId,
        job: JobIndex,
        topic: String,
    },
}

impl RunReport {
    pub fn new(dags: Vec<DagInfo>) -> Self {
        RunReport {
            dags,
            ..Default::default()
        }
    }

    pub fn push(&mut self, event: EventRecord) {
        self.events.push(event);
    }

    pub fn dag(&self, id: DagId) -> Option<&DagInfo> {
        self.dags.iter().find(|d| d.id == Some(id))
    }

    /// Events filtered to one kind, in trace order.
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// First event of `kind` for `(dag, subtask, job)`.
    pub fn find(
        &self,
        kind: EventKind,
        dag: DagId,
        subtask: SubtaskId,
        job: JobIndex,
    ) -> Option<&EventRecord> {
        self.events
            .iter()
            .find(|e| e.kind == kind && e.dag == dag && e.subtask == subtask && e.job == job)
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per join-latency sample in the metrics.
    pub fn sample_rows(&self, label: &SampleLabel) -> Vec<SampleRow> {
        self.metrics
            .join_samples
            .iter()
            .map(|s| SampleRow {
                condition: label.condition.clone(),
                n: label.n,
                max_interval_ms: label.max_interval_ms,
                job: s.job.0,
                latency_ns: Some(s.latency.as_nanos()),
                matched: true,
            })
            .collect()
    }
}

type EventKey = (EventKind, DagId, SubtaskId, JobIndex);

/// First time of each `(kind, dag, subtask, job)` in a trace.
pub(crate) struct TraceIndex {
    first: HashMap<EventKey, TimePoint>,
}

impl TraceIndex {
    pub(crate) fn new(events: &[EventRecord]) -> Self {
        let mut first = HashMap::with_capacity(events.len());
        for e in events {
            first
                .entry((e.kind, e.dag, e.subtask, e.job))
                .or_insert(e.time);
        }
        TraceIndex { first }
    }

    pub(crate) fn get(
        &self,
        kind: EventKind,
        dag: DagId,
        subtask: SubtaskId,
        job: JobIndex,
    ) -> Option<TimePoint> {
        self.first.get(&(kind, dag, subtask, job)).copied()
    }
}

fn completion_with(
    index: &TraceIndex,
    info: &DagInfo,
    dag: DagId,
    k: JobIndex,
) -> Result<TimePoint, TraceError> {
    let mut missing = Vec::new();
    let mut latest = None;
    for &sink in &info.sinks {
        match index.get(EventKind::Finish, dag, sink, k) {
            Some(t) => latest = latest.max(Some(t)),
            None => missing.push(sink),
        }
    }
    match latest {
        Some(t) if missing.is_empty() => Ok(t),
        _ => Err(TraceError::IncompleteJob {
            dag,
            job: k,
            missing,
        }),
    }
}

/// Completion time of job `k`: the latest finish over the DAG's sinks.
pub fn job_completion(report: &RunReport, dag: DagId, k: JobIndex) -> Result<TimePoint, TraceError> {
    let info = report.dag(dag).ok_or(TraceError::UnknownDag(dag))?;
    completion_with(&TraceIndex::new(&report.events), info, dag, k)
}

/// Release time of job `k`, taken from the source's release event.
pub fn release_time(report: &RunReport, dag: DagId, k: JobIndex) -> Result<TimePoint, TraceError> {
    let info = report.dag(dag).ok_or(TraceError::UnknownDag(dag))?;
    let source = info
        .source
        .ok_or(TraceError::MissingRelease { dag, job: k })?;
    report
        .find(EventKind::Release, dag, source, k)
        .map(|e| e.time)
        .ok_or(TraceError::MissingRelease { dag, job: k })
}

/// Whether job `k` completed no later than its release plus `deadline`.
pub fn deadline_met(
    report: &RunReport,
    dag: DagId,
    k: JobIndex,
    deadline: DurationNs,
) -> Result<bool, TraceError> {
    let completion = job_completion(report, dag, k)?;
    let release = release_time(report, dag, k)?;
    Ok(completion <= release + deadline)
}

/// Per-job release, completion and deadline verdicts for every released job.
pub(crate) fn job_records(report: &RunReport) -> Vec<JobRecord> {
    let index = TraceIndex::new(&report.events);
    let mut jobs = Vec::new();
    for info in &report.dags {
        let (Some(dag), Some(source)) = (info.id, info.source) else {
            continue;
        };
        for e in report.events_of(EventKind::Release) {
            if e.dag != dag || e.subtask != source {
                continue;
            }
            let completion = completion_with(&index, info, dag, e.job).ok();
            let deadline_met = match (completion, info.relative_deadline) {
                (Some(c), Some(d)) => Some(c <= e.time + d),
                _ => None,
            };
            jobs.push(JobRecord {
                dag,
                job: e.job,
                release: e.time,
                completion,
                deadline: info.relative_deadline,
                deadline_met,
            });
        }
    }
    jobs
}

/// Join latency of every `JoinReady` and `Trigger` event in the trace.
///
/// For an event of job `k` at subtask `v`, the latency is the event time
/// minus the latest `Publish` of job `k` over `v`'s join inputs. Trigger
/// events carry the emission ordinal as their job, so the `i`-th matched
/// set is measured against the index-`i` publishes.
pub fn join_latencies(report: &RunReport) -> Result<Vec<JoinSample>, TraceError> {
    let mut published: HashMap<(DagId, SubtaskId, JobIndex, &str), TimePoint> = HashMap::new();
    for e in report.events_of(EventKind::Publish) {
        if let Some(topic) = &e.topic {
            published
                .entry((e.dag, e.subtask, e.job, topic.as_str()))
                .or_insert(e.time);
        }
    }

    let mut samples = Vec::new();
    for e in &report.events {
        if !matches!(e.kind, EventKind::JoinReady | EventKind::Trigger) {
            continue;
        }
        let info = report.dag(e.dag).ok_or(TraceError::UnknownDag(e.dag))?;
        let Some(join) = info.joins.iter().find(|j| j.subtask == e.subtask) else {
            continue;
        };
        let mut latest = TimePoint::ZERO;
        for input in &join.inputs {
            let t = published
                .get(&(e.dag, input.producer, e.job, input.topic.as_str()))
                .ok_or_else(|| TraceError::MissingPublish {
                    dag: e.dag,
                    producer: input.producer,
                    job: e.job,
                    topic: input.topic.clone(),
                })?;
            latest = latest.max(*t);
        }
        samples.push(JoinSample {
            dag: e.dag,
            subtask: e.subtask,
            job: e.job,
            latency: e.time.saturating_duration_since(latest),
        });
    }
    Ok(samples)
}

/// An edge `(u, v)` and a job `k` where `v` started before `u` finished.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryViolation {
    pub dag: DagId,
    pub edge: Edge,
    pub job: JobIndex,
    pub predecessor_finish: Option<TimePoint>,
    pub successor_start: TimePoint,
}

/// Checks `Start(v,k) >= Finish(u,k)` for every derived edge and every
/// started `(v,k)`. A successor that starts while its predecessor has no
/// finish for `k` at all also counts.
pub fn completion_boundary_violations(report: &RunReport) -> Vec<BoundaryViolation> {
    let index = TraceIndex::new(&report.events);
    let mut out = Vec::new();
    for info in &report.dags {
        let Some(dag) = info.id else { continue };
        for start in report.events_of(EventKind::Start) {
            if start.dag != dag {
                continue;
            }
            for edge in info.edges.iter().filter(|e| e.to == start.subtask) {
                let finish = index.get(EventKind::Finish, dag, edge.from, start.job);
                if finish.is_none_or(|f| start.time < f) {
                    out.push(BoundaryViolation {
                        dag,
                        edge: edge.clone(),
                        job: start.job,
                        predecessor_finish: finish,
                        successor_start: start.time,
                    });
                }
            }
        }
    }
    out
}

/// Thread-safe, append-only event sink used while a run is in progress.
#[derive(Debug, Default)]
pub struct Collector {
    events: Mutex<Vec<EventRecord>>,
    verbose: bool,
}

impl Collector {
    pub fn new(verbose: bool) -> Self {
        Collector {
            events: Mutex::new(Vec::new()),
            verbose,
        }
    }

    pub fn record(&self, event: EventRecord) {
        if self.verbose {
            log::info!("{event}");
        }
        self.events.lock().expect("collector poisoned").push(event);
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("collector poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events in time order; ties keep recording order.
    pub fn into_events(self) -> Vec<EventRecord> {
        let mut events = self.events.into_inner().expect("collector poisoned");
        events.sort_by_key(|e| e.time);
        events
    }
}

/// Labels shared by every row of one benchmark cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleLabel {
    pub condition: String,
    pub n: usize,
    pub max_interval_ms: Option<u64>,
}

/// One row of the join-latency CSV:
/// `condition,n,max_interval_ms,job,latency_ns,matched`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SampleRow {
    pub condition: String,
    pub n: usize,
    pub max_interval_ms: Option<u64>,
    pub job: u64,
    pub latency_ns: Option<u64>,
    pub matched: bool,
}

pub const CSV_HEADER: [&str; 6] = [
    "condition",
    "n",
    "max_interval_ms",
    "job",
    "latency_ns",
    "matched",
];

/// Writes the header and one line per row. Absent values are empty fields.
pub fn write_samples_csv<W: Write>(rows: &[SampleRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
