//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use fass::builder::{create_dag, DagBuilder, SubtaskFn};
use fass::model::{Attributes, DagId, JobIndex, SubtaskId, SubtaskKind, TypeTag, Value};
use fass::pubsub::StampedMessage;
use fass::time::{DurationNs, TimePoint};
use fass::trace::{DagInfo, EventKind, EventRecord, RunReport};

pub const MS: u64 = 1_000_000;

pub fn ms(v: u64) -> DurationNs {
    DurationNs::from_millis(v)
}

/// A random single-source, single-sink DAG with `2..=max_subtasks` vertices.
///
/// Every intermediate reads 1 to 3 earlier topics and writes one or two new
/// ones; the sink reads whatever nobody else consumed. Durations, periods
/// and priorities are random, zero durations included.
pub fn random_valid_dag<R: Rng>(rng: &mut R, max_subtasks: usize) -> DagBuilder {
    let n = rng.gen_range(2..=max_subtasks.max(2));
    let tag = TypeTag::of::<u64>();
    let mut dag = create_dag();
    let mut topics: Vec<(String, bool)> = Vec::new();

    let attrs = |rng: &mut R, name: String| {
        Attributes::with_priority(rng.gen_range(-3..=3))
            .exec_time(DurationNs::from_nanos(rng.gen_range(0..=15 * MS)))
            .named(name)
    };
    let outputs_body = |k: usize| -> SubtaskFn { Arc::new(move |_| (0..k).map(|i| Value::new(i as u64)).collect()) };

    topics.push(("t0".into(), false));
    let period = DurationNs::from_nanos(rng.gen_range(10 * MS..=60 * MS));
    let a = attrs(rng, "n0".into());
    dag.register_untyped(SubtaskKind::Source, outputs_body(1), &[], &[("t0", tag)], Some(period), a)
        .expect("source registers");

    for i in 1..n - 1 {
        let k = rng.gen_range(1..=topics.len().min(3));
        let picked: Vec<usize> = {
            let mut idx: Vec<usize> = (0..topics.len()).collect();
            idx.shuffle(rng);
            idx.truncate(k);
            idx
        };
        for &p in &picked {
            topics[p].1 = true;
        }
        let ins: Vec<String> = picked.iter().map(|&p| topics[p].0.clone()).collect();
        let mut outs = vec![format!("t{i}")];
        if rng.gen_bool(0.2) {
            outs.push(format!("u{i}"));
        }
        let ins_t: Vec<(&str, TypeTag)> = ins.iter().map(|t| (t.as_str(), tag)).collect();
        let outs_t: Vec<(&str, TypeTag)> = outs.iter().map(|t| (t.as_str(), tag)).collect();
        let a = attrs(rng, format!("n{i}"));
        dag.register_untyped(SubtaskKind::Intermediate, outputs_body(outs.len()), &ins_t, &outs_t, None, a)
            .expect("intermediate registers");
        topics.extend(outs.into_iter().map(|t| (t, false)));
    }

    let mut ins: Vec<String> = topics.iter().filter(|(_, used)| !used).map(|(t, _)| t.clone()).collect();
    if ins.is_empty() {
        ins.push(topics.choose(rng).unwrap().0.clone());
    }
    let ins_t: Vec<(&str, TypeTag)> = ins.iter().map(|t| (t.as_str(), tag)).collect();
    let a = attrs(rng, format!("n{}", n - 1));
    dag.register_untyped(SubtaskKind::Sink, Arc::new(|_| Vec::new()), &ins_t, &[], None, a)
        .expect("sink registers");
    dag
}

/// Stamps emitted by an exact matcher fed strictly increasing per-topic
/// streams: the stamps present on every topic, ascending.
pub fn exact_oracle(streams: &[Vec<u64>]) -> Vec<u64> {
    let mut common: BTreeSet<u64> = streams[0].iter().copied().collect();
    for s in &streams[1..] {
        let set: BTreeSet<u64> = s.iter().copied().collect();
        common = common.intersection(&set).copied().collect();
    }
    common.into_iter().collect()
}

/// Reference approximate matcher: after each arrival, enumerate every
/// combination of buffered messages, keep those whose stamp spread is within
/// tolerance and emit the one with the smallest spread, ties broken by the
/// lexicographically smallest positions.
pub struct ApproxOracle {
    buffers: Vec<VecDeque<(u64, u64)>>,
    tolerance: u64,
    queue_size: usize,
    pub drops: u64,
}

impl ApproxOracle {
    pub fn new(topics: usize, tolerance: u64, queue_size: usize) -> Self {
        ApproxOracle {
            buffers: vec![VecDeque::new(); topics],
            tolerance,
            queue_size,
            drops: 0,
        }
    }

    /// Returns the `(stamp, id)` pairs of the emitted set, in topic order.
    pub fn push(&mut self, topic: usize, stamp: u64, id: u64) -> Option<Vec<(u64, u64)>> {
        self.buffers[topic].push_back((stamp, id));
        if self.buffers[topic].len() > self.queue_size {
            self.buffers[topic].pop_front();
            self.drops += 1;
        }
        let mut best: Option<(u64, Vec<usize>)> = None;
        let mut pos = vec![0usize; self.buffers.len()];
        if self.buffers.iter().any(VecDeque::is_empty) {
            return None;
        }
        loop {
            let stamps: Vec<u64> = pos.iter().enumerate().map(|(t, &p)| self.buffers[t][p].0).collect();
            let spread = stamps.iter().max().unwrap() - stamps.iter().min().unwrap();
            if spread <= self.tolerance {
                let cand = (spread, pos.clone());
                if best.as_ref().is_none_or(|b| cand < *b) {
                    best = Some(cand);
                }
            }
            // Odometer over positions.
            let mut t = pos.len();
            loop {
                if t == 0 {
                    let (_, chosen) = best?;
                    let set = chosen.iter().enumerate().map(|(t, &p)| self.buffers[t][p]).collect();
                    for (t, &p) in chosen.iter().enumerate() {
                        self.buffers[t].drain(..=p);
                    }
                    return Some(set);
                }
                t -= 1;
                pos[t] += 1;
                if pos[t] < self.buffers[t].len() {
                    break;
                }
                pos[t] = 0;
            }
        }
    }
}

/// Every distinct ordering of `counts[t]` arrivals on each topic `t`.
pub fn interleavings(counts: &[usize]) -> Vec<Vec<usize>> {
    fn go(left: &mut [usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.iter().all(|&c| c == 0) {
            out.push(cur.clone());
            return;
        }
        for t in 0..left.len() {
            if left[t] > 0 {
                left[t] -= 1;
                cur.push(t);
                go(left, cur, out);
                cur.pop();
                left[t] += 1;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut counts.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Nondecreasing sequences of length `len` over `values`.
pub fn monotone_sequences(values: &[u64], len: usize) -> Vec<Vec<u64>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for seq in monotone_sequences(values, len - 1) {
        for &v in values {
            if seq.last().is_none_or(|&l| v >= l) {
                let mut s = seq.clone();
                s.push(v);
                out.push(s);
            }
        }
    }
    out
}

pub fn topic_name(t: usize) -> String {
    format!("t{t}")
}

/// A message whose payload is a unique id, so emitted sets can be compared
/// message by message.
pub fn message(topic: usize, stamp_ns: u64, id: u64) -> StampedMessage {
    StampedMessage::new(topic_name(topic), TimePoint::from_nanos(stamp_ns), Value::new(id), TimePoint::ZERO)
}

pub fn ids(set: &[StampedMessage]) -> Vec<(u64, u64)> {
    set.iter()
        .map(|m| (m.stamp.as_nanos(), *m.payload.downcast_ref::<u64>().expect("u64 payload")))
        .collect()
}

/// A trace of one job with source 0 released at `release` and sinks
/// `1..=sink_finishes.len()` finishing at the given times.
pub fn hand_trace(release: TimePoint, sink_finishes: &[TimePoint]) -> (RunReport, DagId) {
    let dag = DagId::fresh();
    let mut info = DagInfo::new(dag);
    info.source = Some(SubtaskId::new(0));
    info.sinks = (1..=sink_finishes.len() as u32).map(SubtaskId::new).collect();
    let mut r = RunReport::new(vec![info]);
    r.push(EventRecord::new(EventKind::Release, dag, SubtaskId::new(0), JobIndex(0), release));
    for (i, &f) in sink_finishes.iter().enumerate() {
        r.push(EventRecord::new(EventKind::Finish, dag, SubtaskId::new(i as u32 + 1), JobIndex(0), f));
    }
    (r, dag)
}
