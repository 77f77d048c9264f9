//! Timestamp synchronizers joining several topics into matched sets.
//!
//! `ApproximateTime` here is a greedy minimal-spread matcher: on each
//! arrival it emits the feasible set with the smallest stamp spread among
//! the sets that contain the new message. It does not reproduce the pivot
//! search of common middleware implementations.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{JobIndex, Value};
use crate::time::{DurationNs, TimePoint};

pub const DEFAULT_SYNC_QUEUE_SIZE: usize = 10;

/// A message as seen by pub/sub application code.
#[derive(Clone, Debug)]
pub struct StampedMessage {
    pub topic: String,
    /// Matching key, written by the application.
    pub stamp: TimePoint,
    pub payload: Value,
    /// When the runtime delivered the publish call.
    pub publish_time: TimePoint,
    lineage: JobIndex,
}

impl StampedMessage {
    pub fn new(topic: impl Into<String>, stamp: TimePoint, payload: Value, publish_time: TimePoint) -> Self {
        StampedMessage {
            topic: topic.into(),
            stamp,
            payload,
            publish_time,
            lineage: JobIndex(0),
        }
    }

    pub(crate) fn with_lineage(mut self, lineage: JobIndex) -> Self {
        self.lineage = lineage;
        self
    }

    /// Source job this message descends from. Tracing only; matching never
    /// looks at it.
    pub fn lineage(&self) -> JobIndex {
        self.lineage
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncKind {
    /// Match only identical stamps.
    ExactTime,
    /// Match stamps whose spread is at most `max_interval`.
    ApproximateTime { max_interval: DurationNs },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncPolicy {
    pub kind: SyncKind,
    /// Per-topic buffer depth; the oldest message is evicted on overflow.
    pub queue_size: usize,
}

impl SyncPolicy {
    pub fn exact() -> Self {
        SyncPolicy {
            kind: SyncKind::ExactTime,
            queue_size: DEFAULT_SYNC_QUEUE_SIZE,
        }
    }

    pub fn approximate(max_interval: DurationNs) -> Self {
        SyncPolicy {
            kind: SyncKind::ApproximateTime { max_interval },
            queue_size: DEFAULT_SYNC_QUEUE_SIZE,
        }
    }

    pub fn with_queue_size(mut self, queue_size: usize) -> Self {
        self.queue_size = queue_size;
        self
    }

    pub fn check(&self) -> Result<(), SyncError> {
        if self.queue_size == 0 {
            return Err(SyncError::ZeroQueue);
        }
        if let SyncKind::ApproximateTime { max_interval } = self.kind {
            if max_interval.is_zero() {
                return Err(SyncError::ZeroInterval);
            }
        }
        Ok(())
    }

    fn tolerance(&self) -> u64 {
        match self.kind {
            SyncKind::ExactTime => 0,
            SyncKind::ApproximateTime { max_interval } => max_interval.as_nanos(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("synchronizer has no topics")]
    NoTopics,
    #[error("queue size must be at least 1")]
    ZeroQueue,
    #[error("max interval must be positive")]
    ZeroInterval,
    #[error("topic {0} is not synchronized here")]
    UnknownTopic(String),
}

/// Buffers one queue per topic and emits one message per topic at a time.
#[derive(Debug)]
pub struct Synchronizer {
    topics: Vec<String>,
    buffers: Vec<VecDeque<StampedMessage>>,
    policy: SyncPolicy,
    drops: u64,
    emitted: u64,
}

impl Synchronizer {
    pub fn new(topics: Vec<String>, policy: SyncPolicy) -> Result<Self, SyncError> {
        policy.check()?;
        if topics.is_empty() {
            return Err(SyncError::NoTopics);
        }
        Ok(Synchronizer {
            buffers: topics.iter().map(|_| VecDeque::new()).collect(),
            topics,
            policy,
            drops: 0,
            emitted: 0,
        })
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn policy(&self) -> SyncPolicy {
        self.policy
    }

    /// Messages evicted by overflow so far.
    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Matched sets emitted so far.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Stamps currently buffered, per topic.
    pub fn buffered(&self) -> Vec<Vec<TimePoint>> {
        self.buffers
            .iter()
            .map(|b| b.iter().map(|m| m.stamp).collect())
            .collect()
    }

    /// Buffers `incoming` and applies the configured policy.
    pub fn push(&mut self, incoming: StampedMessage) -> Result<Option<Vec<StampedMessage>>, SyncError> {
        match self.policy.kind {
            SyncKind::ExactTime => self.exact_time_match(incoming),
            SyncKind::ApproximateTime { .. } => self.approx_time_match(incoming),
        }
    }

    fn buffer(&mut self, incoming: StampedMessage) -> Result<usize, SyncError> {
        let t = self
            .topics
            .iter()
            .position(|t| *t == incoming.topic)
            .ok_or_else(|| SyncError::UnknownTopic(incoming.topic.clone()))?;
        let buf = &mut self.buffers[t];
        buf.push_back(incoming);
        if buf.len() > self.policy.queue_size {
            buf.pop_front();
            self.drops += 1;
        }
        Ok(t)
    }

    /// Emits the set whose stamps all equal `incoming.stamp`, taking the
    /// earliest such message on every topic.
    pub fn exact_time_match(&mut self, incoming: StampedMessage) -> Result<Option<Vec<StampedMessage>>, SyncError> {
        let stamp = incoming.stamp;
        self.buffer(incoming)?;
        let positions: Option<Vec<usize>> = self
            .buffers
            .iter()
            .map(|b| b.iter().position(|m| m.stamp == stamp))
            .collect();
        Ok(positions.map(|p| self.take(&p)))
    }

    /// Emits the minimal-spread set containing `incoming` whose spread is
    /// within the tolerance. Ties go to the lexicographically smallest
    /// buffer positions.
    pub fn approx_time_match(&mut self, incoming: StampedMessage) -> Result<Option<Vec<StampedMessage>>, SyncError> {
        let t = self.buffer(incoming)?;
        let pinned = self.buffers[t].len() - 1;
        let stamp = self.buffers[t][pinned].stamp.as_nanos();
        let mut search = Search {
            buffers: &self.buffers,
            pinned: (t, pinned),
            tolerance: self.policy.tolerance(),
            choice: vec![0; self.buffers.len()],
            best: None,
        };
        search.visit(0, stamp, stamp);
        let best = search.best.map(|(_, p)| p);
        Ok(best.map(|p| self.take(&p)))
    }

    /// Removes the chosen messages and everything older on each topic.
    fn take(&mut self, positions: &[usize]) -> Vec<StampedMessage> {
        self.emitted += 1;
        self.buffers
            .iter_mut()
            .zip(positions)
            .map(|(b, &p)| b.drain(..=p).next_back().expect("position in range"))
            .collect()
    }
}

struct Search<'a> {
    buffers: &'a [VecDeque<StampedMessage>],
    pinned: (usize, usize),
    tolerance: u64,
    choice: Vec<usize>,
    best: Option<(u64, Vec<usize>)>,
}

impl Search<'_> {
    /// Depth-first over topics in order, positions in order, so the first
    /// set found at a given spread is the lexicographically smallest.
    fn visit(&mut self, topic: usize, lo: u64, hi: u64) {
        if topic == self.buffers.len() {
            self.best = Some((hi - lo, self.choice.clone()));
            return;
        }
        let candidates: Vec<usize> = if topic == self.pinned.0 {
            vec![self.pinned.1]
        } else {
            (0..self.buffers[topic].len()).collect()
        };
        for p in candidates {
            let s = self.buffers[topic][p].stamp.as_nanos();
            let (lo, hi) = (lo.min(s), hi.max(s));
            let spread = hi - lo;
            if spread > self.tolerance || self.best.as_ref().is_some_and(|(b, _)| spread >= *b) {
                continue;
            }
            self.choice[topic] = p;
            self.visit(topic + 1, lo, hi);
        }
    }
}
