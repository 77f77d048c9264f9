//! Callback-driven publish/subscribe runtime.
//!
//! Nodes react to timers, single subscriptions, or synchronized topic sets.
//! A callback may publish at any point in its body, stamps are chosen by
//! application code, and joins go through a [`Synchronizer`]. Nothing here
//! enforces the completion boundary; the trace shows whether a given set of
//! callbacks happened to respect it.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use super::sync::{StampedMessage, SyncError, SyncPolicy, Synchronizer};
use crate::dispatch::{ReadyQueue, Timeline, WorkerPool};
use crate::executor::{panic_message, RuntimeConfig};
use crate::model::{DagId, Edge, JobIndex, SubtaskId, Value};
use crate::time::{spin_until, Clock, ClockMode, DurationNs, TimePoint, VirtualClock, WallClock};
use crate::trace::{
    job_records, join_latencies, Collector, DagInfo, EventKind, EventRecord, JoinInput, JoinPoint,
    RunReport, TraceError,
};

/// How relays stamp what they publish.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StampPolicy {
    /// Copy the input stamp, so every message of one source job shares the
    /// source's stamp.
    #[default]
    Propagate,
    /// Stamp with the relay's own publish time.
    Restamp,
}

impl StampPolicy {
    pub fn stamp(self, input: TimePoint, now: TimePoint) -> TimePoint {
        match self {
            StampPolicy::Propagate => input,
            StampPolicy::Restamp => now,
        }
    }
}

pub type Callback = Arc<dyn Fn(&mut CallbackContext) + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trigger {
    Timer { period: DurationNs },
    Subscription { topic: String },
    /// One callback per matched set of the listed topics.
    Synchronized { topics: Vec<String> },
}

#[derive(Clone)]
pub struct NodeSpec {
    pub name: String,
    pub trigger: Trigger,
    /// Topics the callback may publish to.
    pub publishes: Vec<String>,
    pub callback: Callback,
    /// Declared callback duration, used when no duration table is supplied.
    pub exec_time: DurationNs,
    pub priority: i32,
}

impl fmt::Debug for NodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeSpec")
            .field("name", &self.name)
            .field("trigger", &self.trigger)
            .field("publishes", &self.publishes)
            .field("exec_time", &self.exec_time)
            .field("priority", &self.priority)
            .finish()
    }
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, trigger: Trigger, publishes: Vec<&str>, callback: Callback) -> Self {
        NodeSpec {
            name: name.into(),
            trigger,
            publishes: publishes.into_iter().map(String::from).collect(),
            callback,
            exec_time: DurationNs::ZERO,
            priority: 0,
        }
    }

    pub fn exec_time(mut self, d: DurationNs) -> Self {
        self.exec_time = d;
        self
    }

    pub fn priority(mut self, p: i32) -> Self {
        self.priority = p;
        self
    }

    fn subscriptions(&self) -> &[String] {
        match &self.trigger {
            Trigger::Timer { .. } => &[],
            Trigger::Subscription { topic } => std::slice::from_ref(topic),
            Trigger::Synchronized { topics } => topics,
        }
    }
}

/// A set of nodes wired by topic name.
#[derive(Clone, Debug)]
pub struct PubSubGraph {
    id: DagId,
    nodes: Vec<NodeSpec>,
    publish_costs: BTreeMap<String, DurationNs>,
}

impl Default for PubSubGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl PubSubGraph {
    pub fn new() -> Self {
        PubSubGraph {
            id: DagId::fresh(),
            nodes: Vec::new(),
            publish_costs: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> DagId {
        self.id
    }

    pub fn add_node(&mut self, node: NodeSpec) -> SubtaskId {
        self.nodes.push(node);
        SubtaskId::new(self.nodes.len() as u32 - 1)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    /// Makes every publish on `topic` hold the caller for `cost`, as a
    /// blocking publish would.
    pub fn set_publish_cost(&mut self, topic: impl Into<String>, cost: DurationNs) {
        self.publish_costs.insert(topic.into(), cost);
    }

    fn publishers(&self, topic: &str) -> Vec<SubtaskId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.publishes.iter().any(|t| t == topic))
            .map(|(i, _)| SubtaskId::new(i as u32))
            .collect()
    }

    fn check(&self) -> Result<(), PubSubError> {
        for n in &self.nodes {
            if let Trigger::Timer { period } = n.trigger {
                if period.is_zero() {
                    return Err(PubSubError::Graph(format!("{}: timer period must be positive", n.name)));
                }
            }
            if let Trigger::Synchronized { topics } = &n.trigger {
                for t in topics {
                    if self.publishers(t).len() != 1 {
                        return Err(PubSubError::Graph(format!(
                            "{}: synchronized topic {t} needs exactly one publisher",
                            n.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Trace-facing description; timers are sources, nodes that publish
    /// nothing are sinks, synchronized nodes over several topics are joins.
    pub fn info(&self) -> DagInfo {
        let mut info = DagInfo::new(self.id);
        info.names = self.nodes.iter().map(|n| n.name.clone()).collect();
        info.source = self
            .nodes
            .iter()
            .position(|n| matches!(n.trigger, Trigger::Timer { .. }))
            .map(|i| SubtaskId::new(i as u32));
        info.relative_deadline = info.source.and_then(|s| match self.nodes[s.index()].trigger {
            Trigger::Timer { period } => Some(period),
            _ => None,
        });
        for (i, n) in self.nodes.iter().enumerate() {
            let to = SubtaskId::new(i as u32);
            if n.publishes.is_empty() {
                info.sinks.push(to);
            }
            for t in n.subscriptions() {
                for from in self.publishers(t) {
                    info.edges.push(Edge {
                        from,
                        to,
                        topic: t.clone(),
                    });
                }
            }
            if let Trigger::Synchronized { topics } = &n.trigger {
                if topics.len() > 1 {
                    info.joins.push(JoinPoint {
                        subtask: to,
                        inputs: topics
                            .iter()
                            .map(|t| JoinInput {
                                producer: self.publishers(t)[0],
                                topic: t.clone(),
                            })
                            .collect(),
                    });
                }
            }
        }
        info
    }
}

#[derive(Debug, Error)]
pub enum PubSubError {
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("{node} published to undeclared topic {topic}")]
    UnknownTopic { node: String, topic: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{node} panicked: {message}")]
    Panicked { node: String, message: String },
    #[error("invalid trace: {0}")]
    Trace(#[from] TraceError),
}

enum Backend<'a> {
    Virtual {
        start: TimePoint,
        offset: DurationNs,
        out: Vec<(DurationNs, StampedMessage)>,
    },
    Wall {
        clock: &'a WallClock,
        notes: &'a Sender<Note>,
        node: usize,
    },
}

/// What a running callback can see and do.
pub struct CallbackContext<'a> {
    backend: Backend<'a>,
    inputs: Vec<StampedMessage>,
    job: JobIndex,
    exec_time: DurationNs,
    stamp_policy: StampPolicy,
    name: &'a str,
    publishes: &'a [String],
    costs: &'a BTreeMap<String, DurationNs>,
    error: Option<PubSubError>,
}

impl CallbackContext<'_> {
    pub fn now(&self) -> TimePoint {
        match &self.backend {
            Backend::Virtual { start, offset, .. } => *start + *offset,
            Backend::Wall { clock, .. } => clock.now(),
        }
    }

    /// Occupies the callback for `d`.
    pub fn work(&mut self, d: DurationNs) {
        match &mut self.backend {
            Backend::Virtual { offset, .. } => *offset = *offset + d,
            Backend::Wall { clock, .. } => {
                let until = clock.now() + d;
                spin_until(clock, until);
            }
        }
    }

    /// Delivers a message to every subscriber of `topic` right now.
    pub fn publish(&mut self, topic: &str, stamp: TimePoint, payload: Value) -> Result<(), PubSubError> {
        if !self.publishes.iter().any(|t| t == topic) {
            let err = PubSubError::UnknownTopic {
                node: self.name.to_string(),
                topic: topic.to_string(),
            };
            self.error.get_or_insert(PubSubError::UnknownTopic {
                node: self.name.to_string(),
                topic: topic.to_string(),
            });
            return Err(err);
        }
        let now = self.now();
        let msg = StampedMessage::new(topic, stamp, payload, now).with_lineage(self.job);
        match &mut self.backend {
            Backend::Virtual { offset, out, .. } => out.push((*offset, msg)),
            Backend::Wall { notes, node, .. } => {
                let _ = notes.send(Note::Publish { node: *node, msg });
            }
        }
        if let Some(&cost) = self.costs.get(topic) {
            self.work(cost);
        }
        Ok(())
    }

    /// Triggering messages: empty for timers, one for a subscription, one
    /// per topic for a synchronized set.
    pub fn inputs(&self) -> &[StampedMessage] {
        &self.inputs
    }

    /// Declared or tabled duration of this activation.
    pub fn exec_time(&self) -> DurationNs {
        self.exec_time
    }

    pub fn stamp_policy(&self) -> StampPolicy {
        self.stamp_policy
    }

    /// Activation index: the timer tick, the input's source job, or the
    /// synchronizer emission ordinal.
    pub fn job(&self) -> JobIndex {
        self.job
    }
}

/// Timer callback: works for its duration, then publishes the job index to
/// every topic stamped with the publish time.
pub fn source_callback(topics: Vec<String>) -> Callback {
    Arc::new(move |ctx| {
        ctx.work(ctx.exec_time());
        let stamp = ctx.now();
        for t in &topics {
            let _ = ctx.publish(t, stamp, Value::new(ctx.job().0));
        }
    })
}

/// Subscription callback: works, then forwards the payload with a stamp
/// chosen by the stamp policy.
pub fn relay_callback(topic: String) -> Callback {
    Arc::new(move |ctx| {
        ctx.work(ctx.exec_time());
        let input = ctx.inputs()[0].clone();
        let stamp = ctx.stamp_policy().stamp(input.stamp, ctx.now());
        let _ = ctx.publish(&topic, stamp, input.payload);
    })
}

/// Callback that only consumes time.
pub fn sink_callback() -> Callback {
    Arc::new(|ctx| ctx.work(ctx.exec_time()))
}

enum Note {
    Publish {
        node: usize,
        msg: StampedMessage,
    },
    Finish {
        node: usize,
        job: JobIndex,
        time: TimePoint,
        error: Option<PubSubError>,
    },
}

struct Activation {
    job: JobIndex,
    inputs: Vec<StampedMessage>,
    ready: TimePoint,
}

struct NodeState {
    pending: VecDeque<Activation>,
    busy: bool,
    queued: bool,
    sync: Option<Synchronizer>,
    triggers: u64,
    next_tick: u64,
    armed: bool,
}

struct Engine<'g> {
    graph: &'g PubSubGraph,
    cfg: RuntimeConfig,
    stamp_policy: StampPolicy,
    states: Vec<NodeState>,
    subscribers: BTreeMap<String, Vec<usize>>,
    ready: ReadyQueue<usize>,
    free_workers: usize,
    collector: Collector,
    max_jitter: DurationNs,
}

struct Started {
    node: usize,
    job: JobIndex,
    inputs: Vec<StampedMessage>,
    exec: DurationNs,
}

impl<'g> Engine<'g> {
    fn new(graph: &'g PubSubGraph, policy: SyncPolicy, stamp_policy: StampPolicy, cfg: &RuntimeConfig) -> Result<Self, PubSubError> {
        let mut subscribers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut states = Vec::with_capacity(graph.nodes.len());
        for (i, n) in graph.nodes.iter().enumerate() {
            for t in n.subscriptions() {
                subscribers.entry(t.clone()).or_default().push(i);
            }
            let sync = match &n.trigger {
                Trigger::Synchronized { topics } => Some(Synchronizer::new(topics.clone(), policy)?),
                _ => None,
            };
            let armed = match n.trigger {
                Trigger::Timer { .. } => cfg.limit.allows(0, TimePoint::ZERO),
                _ => false,
            };
            states.push(NodeState {
                pending: VecDeque::new(),
                busy: false,
                queued: false,
                sync,
                triggers: 0,
                next_tick: 0,
                armed,
            });
        }
        Ok(Engine {
            graph,
            cfg: cfg.clone(),
            stamp_policy,
            states,
            subscribers,
            ready: ReadyQueue::new(),
            free_workers: cfg.workers,
            collector: Collector::new(cfg.verbose),
            max_jitter: DurationNs::ZERO,
        })
    }

    fn record(&self, kind: EventKind, node: usize, job: JobIndex, t: TimePoint) {
        self.collector
            .record(EventRecord::new(kind, self.graph.id, SubtaskId::new(node as u32), job, t));
    }

    fn period(&self, node: usize) -> DurationNs {
        match self.graph.nodes[node].trigger {
            Trigger::Timer { period } => period,
            _ => unreachable!("only timers tick"),
        }
    }

    fn next_timer(&self) -> Option<(TimePoint, usize)> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.armed)
            .map(|(i, s)| (TimePoint::ZERO + self.period(i) * s.next_tick, i))
            .min()
    }

    fn on_tick(&mut self, node: usize, now: TimePoint) {
        let period = self.period(node);
        let st = &mut self.states[node];
        let job = JobIndex(st.next_tick);
        let nominal = TimePoint::ZERO + period * st.next_tick;
        st.next_tick += 1;
        st.armed = self.cfg.limit.allows(st.next_tick, TimePoint::ZERO + period * st.next_tick);
        st.pending.push_back(Activation {
            job,
            inputs: Vec::new(),
            ready: now,
        });
        self.max_jitter = self.max_jitter.max(now.saturating_duration_since(nominal));
        self.record(EventKind::Release, node, job, now);
    }

    fn deliver(&mut self, from: usize, msg: StampedMessage, now: TimePoint) -> Result<(), PubSubError> {
        self.collector.record(
            EventRecord::new(
                EventKind::Publish,
                self.graph.id,
                SubtaskId::new(from as u32),
                msg.lineage(),
                msg.publish_time,
            )
            .on_topic(msg.topic.clone()),
        );
        let subs = self.subscribers.get(&msg.topic).cloned().unwrap_or_default();
        for s in subs {
            let st = &mut self.states[s];
            match st.sync.as_mut() {
                None => st.pending.push_back(Activation {
                    job: msg.lineage(),
                    inputs: vec![msg.clone()],
                    ready: now,
                }),
                Some(sync) => {
                    if let Some(set) = sync.push(msg.clone())? {
                        let job = JobIndex(st.triggers);
                        st.triggers += 1;
                        st.pending.push_back(Activation {
                            job,
                            inputs: set,
                            ready: now,
                        });
                        self.record(EventKind::Trigger, s, job, now);
                    }
                }
            }
        }
        Ok(())
    }

    fn on_finish(&mut self, node: usize, job: JobIndex, t: TimePoint) {
        self.record(EventKind::Finish, node, job, t);
        self.states[node].busy = false;
        self.free_workers += 1;
    }

    fn dispatch(&mut self, now: TimePoint) -> Vec<Started> {
        for (i, st) in self.states.iter_mut().enumerate() {
            if !st.busy && !st.queued {
                if let Some(a) = st.pending.front() {
                    st.queued = true;
                    self.ready.push(self.graph.nodes[i].priority, a.ready, (0, i), i);
                }
            }
        }
        let mut started = Vec::new();
        while self.free_workers > 0 {
            let Some((_, node)) = self.ready.pop() else { break };
            self.free_workers -= 1;
            let st = &mut self.states[node];
            let a = st.pending.pop_front().expect("queued node has work");
            st.queued = false;
            st.busy = true;
            self.record(EventKind::Start, node, a.job, now);
            let exec = self.cfg.duration_of(
                self.graph.id,
                SubtaskId::new(node as u32),
                a.job,
                self.graph.nodes[node].exec_time,
            );
            started.push(Started {
                node,
                job: a.job,
                inputs: a.inputs,
                exec,
            });
        }
        started
    }

    fn idle(&self) -> bool {
        self.states
            .iter()
            .all(|s| !s.armed && !s.busy && s.pending.is_empty())
    }

    fn context<'c>(&'c self, s: &Started, backend: Backend<'c>) -> CallbackContext<'c> {
        let node = &self.graph.nodes[s.node];
        CallbackContext {
            backend,
            inputs: s.inputs.clone(),
            job: s.job,
            exec_time: s.exec,
            stamp_policy: self.stamp_policy,
            name: &node.name,
            publishes: &node.publishes,
            costs: &self.graph.publish_costs,
            error: None,
        }
    }

    fn into_report(self) -> Result<RunReport, PubSubError> {
        let mut report = RunReport::new(vec![self.graph.info()]);
        report.events = self.collector.into_events();
        report.metrics.jobs = job_records(&report);
        report.metrics.join_samples = join_latencies(&report)?;
        report.metrics.max_release_jitter = self.max_jitter;
        for st in &self.states {
            if let Some(sync) = &st.sync {
                report.metrics.drops += sync.drops();
                report.metrics.triggers += sync.emitted();
            }
        }
        Ok(report)
    }

    fn run_virtual(mut self) -> Result<RunReport, PubSubError> {
        enum Ev {
            Deliver { from: usize, msg: StampedMessage },
            Finish { node: usize, job: JobIndex },
            Tick(usize),
        }
        const DELIVER: u8 = 0;
        const FINISH: u8 = 1;
        const TICK: u8 = 2;

        let clock = VirtualClock::new();
        let mut timeline = Timeline::new();
        for (i, st) in self.states.iter().enumerate() {
            if st.armed {
                timeline.push(TimePoint::ZERO, TICK, Ev::Tick(i));
            }
        }
        loop {
            let now = clock.now();
            for s in self.dispatch(now) {
                let callback = Arc::clone(&self.graph.nodes[s.node].callback);
                let mut ctx = self.context(
                    &s,
                    Backend::Virtual {
                        start: now,
                        offset: DurationNs::ZERO,
                        out: Vec::new(),
                    },
                );
                catch_unwind(AssertUnwindSafe(|| callback(&mut ctx))).map_err(|p| PubSubError::Panicked {
                    node: self.graph.nodes[s.node].name.clone(),
                    message: panic_message(p.as_ref()),
                })?;
                if let Some(err) = ctx.error.take() {
                    return Err(err);
                }
                let Backend::Virtual { offset, out, .. } = ctx.backend else {
                    unreachable!()
                };
                for (at, msg) in out {
                    timeline.push(now + at, DELIVER, Ev::Deliver { from: s.node, msg });
                }
                timeline.push(now + offset, FINISH, Ev::Finish { node: s.node, job: s.job });
            }
            let Some((t, first)) = timeline.pop() else {
                debug_assert!(self.idle());
                return self.into_report();
            };
            clock.advance_to(t);
            let mut next = Some(first);
            while let Some(ev) = next {
                match ev {
                    Ev::Deliver { from, msg } => self.deliver(from, msg, t)?,
                    Ev::Finish { node, job } => self.on_finish(node, job, t),
                    Ev::Tick(node) => {
                        self.on_tick(node, t);
                        if self.states[node].armed {
                            let at = TimePoint::ZERO + self.period(node) * self.states[node].next_tick;
                            timeline.push(at, TICK, Ev::Tick(node));
                        }
                    }
                }
                next = timeline.pop_at(t);
            }
        }
    }

    fn run_wall(mut self) -> Result<RunReport, PubSubError> {
        struct Work {
            node: usize,
            callback: Callback,
            ctx: OwnedContext,
        }

        let clock = Arc::new(WallClock::new());
        let (tx, rx): (Sender<Note>, Receiver<Note>) = unbounded();
        let graph = Arc::new(self.graph.clone());
        let pool = {
            let clock = Arc::clone(&clock);
            let tx = tx.clone();
            let graph = Arc::clone(&graph);
            WorkerPool::new(self.cfg.workers, move |w: Work| {
                let node = &graph.nodes[w.node];
                let mut ctx = CallbackContext {
                    backend: Backend::Wall {
                        clock: &clock,
                        notes: &tx,
                        node: w.node,
                    },
                    inputs: w.ctx.inputs,
                    job: w.ctx.job,
                    exec_time: w.ctx.exec,
                    stamp_policy: w.ctx.stamp_policy,
                    name: &node.name,
                    publishes: &node.publishes,
                    costs: &graph.publish_costs,
                    error: None,
                };
                let outcome = catch_unwind(AssertUnwindSafe(|| (w.callback)(&mut ctx)));
                let error = match outcome {
                    Ok(()) => ctx.error.take(),
                    Err(p) => Some(PubSubError::Panicked {
                        node: node.name.clone(),
                        message: panic_message(p.as_ref()),
                    }),
                };
                let _ = tx.send(Note::Finish {
                    node: w.node,
                    job: w.ctx.job,
                    time: clock.now(),
                    error,
                });
            })
        };
        drop(tx);

        let mut running = 0usize;
        loop {
            let now = clock.now();
            for s in self.dispatch(now) {
                running += 1;
                pool.submit(Work {
                    node: s.node,
                    callback: Arc::clone(&self.graph.nodes[s.node].callback),
                    ctx: OwnedContext {
                        inputs: s.inputs,
                        job: s.job,
                        exec: s.exec,
                        stamp_policy: self.stamp_policy,
                    },
                });
            }
            let timer = self.next_timer();
            if running == 0 && timer.is_none() && self.idle() {
                drop(pool);
                return self.into_report();
            }
            let note = match timer {
                Some((at, _)) => match rx.recv_deadline(clock.instant_at(at).max(Instant::now())) {
                    Ok(n) => Some(n),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => unreachable!("pool holds a sender"),
                },
                None => Some(rx.recv().expect("pool holds a sender")),
            };
            match note {
                Some(Note::Publish { node, msg }) => self.deliver(node, msg, clock.now())?,
                Some(Note::Finish { node, job, time, error }) => {
                    running -= 1;
                    if let Some(e) = error {
                        return Err(e);
                    }
                    self.on_finish(node, job, time);
                }
                None => {}
            }
            let now = clock.now();
            while let Some((at, node)) = self.next_timer() {
                if at > now {
                    break;
                }
                self.on_tick(node, now);
            }
        }
    }
}

struct OwnedContext {
    inputs: Vec<StampedMessage>,
    job: JobIndex,
    exec: DurationNs,
    stamp_policy: StampPolicy,
}

/// Runs `graph` until every timer has fired its last tick and all work has
/// drained.
///
/// Every synchronized node uses `policy`; relays stamp according to
/// `stamp_policy`. The run limit, worker count, clock and duration table
/// come from `cfg`.
pub fn run_pubsub(
    graph: &PubSubGraph,
    policy: SyncPolicy,
    stamp_policy: StampPolicy,
    cfg: &RuntimeConfig,
) -> Result<RunReport, PubSubError> {
    if cfg.workers == 0 {
        return Err(PubSubError::InvalidConfig("worker count must be at least 1".into()));
    }
    policy.check()?;
    graph.check()?;
    let engine = Engine::new(graph, policy, stamp_policy, cfg)?;
    match cfg.clock {
        ClockMode::Virtual => engine.run_virtual(),
        ClockMode::Wall => engine.run_wall(),
    }
}
