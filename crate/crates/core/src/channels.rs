//! Per-subtask message bundles.
//!
//! A [`JoinGate`] owns one bounded FIFO per input topic and releases a tuple
//! only when every input holds the same job index at its head. A [`Fanout`]
//! publishes all outputs of one completion in a single critical section, so
//! no observer can see a proper subset of them.
//!
//! A topic with several subscribers gets one queue per subscriber; the
//! fanout copies the message into each at send time.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use thiserror::Error;

use crate::model::{JobIndex, Message, TopicId, Value};
use crate::time::{Clock, TimePoint};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("runtime is shutting down")]
    Shutdown,
    #[error("topic {topic}: expected job {expected}, queue head holds job {found}")]
    IndexGap {
        topic: String,
        expected: JobIndex,
        found: JobIndex,
    },
    #[error("topic {topic}: job {job} does not follow job {last}")]
    OutOfOrder {
        topic: String,
        job: JobIndex,
        last: JobIndex,
    },
    #[error("expected {expected} outputs, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Default)]
struct SignalState {
    generation: u64,
    closed: bool,
}

/// Generation counter plus condvar; waiters sleep until the generation moves.
#[derive(Debug, Default)]
struct Signal {
    state: Mutex<SignalState>,
    cv: Condvar,
}

impl Signal {
    fn observe(&self) -> (u64, bool) {
        let s = self.state.lock().expect("signal poisoned");
        (s.generation, s.closed)
    }

    fn notify(&self) {
        self.state.lock().expect("signal poisoned").generation += 1;
        self.cv.notify_all();
    }

    fn close(&self) {
        let mut s = self.state.lock().expect("signal poisoned");
        s.closed = true;
        s.generation += 1;
        drop(s);
        self.cv.notify_all();
    }

    fn wait_past(&self, seen: u64) {
        let mut s = self.state.lock().expect("signal poisoned");
        while s.generation == seen && !s.closed {
            s = self.cv.wait(s).expect("signal poisoned");
        }
    }
}

#[derive(Debug)]
struct Slot {
    message: Message,
    arrival: TimePoint,
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<Slot>,
    last: Option<JobIndex>,
    closed: bool,
}

/// Bounded FIFO of messages for one (topic, subscriber) pair.
#[derive(Debug)]
pub struct TopicQueue {
    id: u64,
    topic: TopicId,
    capacity: usize,
    state: Mutex<QueueState>,
    consumer: Arc<Signal>,
    space: Signal,
}

impl TopicQueue {
    pub fn new(topic: TopicId, capacity: usize) -> Arc<Self> {
        Self::with_consumer(topic, capacity, Arc::default())
    }

    fn with_consumer(topic: TopicId, capacity: usize, consumer: Arc<Signal>) -> Arc<Self> {
        static NEXT: AtomicU64 = AtomicU64::new(0);
        assert!(capacity > 0, "queue capacity must be positive");
        Arc::new(TopicQueue {
            id: NEXT.fetch_add(1, Ordering::Relaxed),
            topic,
            capacity,
            state: Mutex::default(),
            consumer,
            space: Signal::default(),
        })
    }

    pub fn topic(&self) -> &TopicId {
        &self.topic
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_job(&self) -> Option<JobIndex> {
        self.lock().items.front().map(|s| s.message.job)
    }

    /// Job indices currently queued, head first.
    pub fn jobs(&self) -> Vec<JobIndex> {
        self.lock().items.iter().map(|s| s.message.job).collect()
    }

    /// Wakes every waiter; further sends and receives report `Shutdown`.
    pub fn close(&self) {
        self.lock().closed = true;
        self.consumer.close();
        self.space.close();
    }

    /// Drops the head message. Test hook for lossy-delivery scenarios.
    #[cfg(test)]
    pub(crate) fn discard_head(&self) -> Option<JobIndex> {
        let popped = self.lock().items.pop_front().map(|s| s.message.job);
        self.space.notify();
        popped
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().expect("topic queue poisoned")
    }
}

/// Locks `queues` in id order; guards come back in the caller's order.
fn lock_all<'a>(queues: &[&'a TopicQueue]) -> Vec<MutexGuard<'a, QueueState>> {
    let mut order: Vec<usize> = (0..queues.len()).collect();
    order.sort_by_key(|&i| queues[i].id);
    let mut guards: Vec<Option<MutexGuard<'a, QueueState>>> =
        (0..queues.len()).map(|_| None).collect();
    for i in order {
        guards[i] = Some(queues[i].lock());
    }
    guards.into_iter().map(|g| g.expect("locked")).collect()
}

/// Job indices of several queues observed in one atomic step.
pub fn snapshot(queues: &[Arc<TopicQueue>]) -> Vec<Vec<JobIndex>> {
    let refs: Vec<&TopicQueue> = queues.iter().map(|q| q.as_ref()).collect();
    lock_all(&refs)
        .iter()
        .map(|g| g.items.iter().map(|s| s.message.job).collect())
        .collect()
}

/// One message per input topic, all of the same job.
#[derive(Clone, Debug)]
pub struct Joined {
    pub job: JobIndex,
    /// In input-topic order.
    pub messages: Vec<Message>,
    /// Arrival time of the last-arriving input.
    pub ready_time: TimePoint,
}

impl Joined {
    pub fn values(&self) -> Vec<Value> {
        self.messages.iter().map(|m| m.payload.clone()).collect()
    }

    pub fn max_publish_time(&self) -> TimePoint {
        self.messages
            .iter()
            .map(|m| m.publish_time)
            .max()
            .unwrap_or_default()
    }
}

/// AND-join over a subtask's input topics.
#[derive(Debug)]
pub struct JoinGate {
    queues: Vec<Arc<TopicQueue>>,
    expected: JobIndex,
    signal: Arc<Signal>,
}

impl JoinGate {
    pub fn new(inputs: Vec<TopicId>, capacity: usize) -> Self {
        let signal: Arc<Signal> = Arc::default();
        let queues = inputs
            .into_iter()
            .map(|t| TopicQueue::with_consumer(t, capacity, Arc::clone(&signal)))
            .collect();
        JoinGate {
            queues,
            expected: JobIndex(0),
            signal,
        }
    }

    pub fn inputs(&self) -> &[Arc<TopicQueue>] {
        &self.queues
    }

    /// Producer-side handle for the `i`-th input.
    pub fn input(&self, i: usize) -> Arc<TopicQueue> {
        Arc::clone(&self.queues[i])
    }

    /// The job index the next tuple will carry.
    pub fn expected(&self) -> JobIndex {
        self.expected
    }

    pub fn close(&self) {
        for q in &self.queues {
            q.close();
        }
    }

    /// Takes the next tuple if every input holds the expected job at its head.
    pub fn try_recv_all(&mut self) -> Result<Option<Joined>, ChannelError> {
        let refs: Vec<&TopicQueue> = self.queues.iter().map(|q| q.as_ref()).collect();
        let mut guards = lock_all(&refs);

        let mut complete = true;
        for (q, g) in self.queues.iter().zip(&guards) {
            match g.items.front() {
                Some(head) if head.message.job != self.expected => {
                    return Err(ChannelError::IndexGap {
                        topic: q.topic.name().to_string(),
                        expected: self.expected,
                        found: head.message.job,
                    });
                }
                Some(_) => {}
                None if g.closed => return Err(ChannelError::Shutdown),
                None => complete = false,
            }
        }
        if !complete || self.queues.is_empty() {
            return Ok(None);
        }

        let mut messages = Vec::with_capacity(guards.len());
        let mut ready_time = TimePoint::ZERO;
        for g in guards.iter_mut() {
            let slot = g.items.pop_front().expect("head checked");
            ready_time = ready_time.max(slot.arrival);
            messages.push(slot.message);
        }
        drop(guards);
        for q in &self.queues {
            q.space.notify();
        }

        let job = self.expected;
        self.expected = job.next();
        Ok(Some(Joined {
            job,
            messages,
            ready_time,
        }))
    }

    /// Blocks until the next tuple is available.
    pub fn recv_all(&mut self) -> Result<Joined, ChannelError> {
        loop {
            let (seen, closed) = self.signal.observe();
            if let Some(joined) = self.try_recv_all()? {
                return Ok(joined);
            }
            if closed {
                return Err(ChannelError::Shutdown);
            }
            self.signal.wait_past(seen);
        }
    }
}

#[derive(Debug)]
struct FanoutTopic {
    topic: TopicId,
    subscribers: Vec<Arc<TopicQueue>>,
}

/// Result of a non-blocking send.
#[derive(Debug)]
pub enum SendOutcome {
    Sent,
    /// Some destination is at capacity; nothing was enqueued.
    Full(Vec<Value>),
}

enum Attempt {
    Sent,
    Blocked { queue: Arc<TopicQueue>, seen: u64 },
}

/// Atomic multi-topic emission for one producer.
#[derive(Debug, Default)]
pub struct Fanout {
    outputs: Vec<FanoutTopic>,
}

impl Fanout {
    pub fn new(topics: Vec<TopicId>) -> Self {
        Fanout {
            outputs: topics
                .into_iter()
                .map(|topic| FanoutTopic {
                    topic,
                    subscribers: Vec::new(),
                })
                .collect(),
        }
    }

    /// Routes output `index` into `queue` as well.
    pub fn subscribe(&mut self, index: usize, queue: Arc<TopicQueue>) {
        self.outputs[index].subscribers.push(queue);
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicId> {
        self.outputs.iter().map(|o| &o.topic)
    }

    pub fn arity(&self) -> usize {
        self.outputs.len()
    }

    fn attempt(
        &self,
        job: JobIndex,
        outputs: &[Value],
        finish_time: TimePoint,
        now: TimePoint,
    ) -> Result<Attempt, ChannelError> {
        if outputs.len() != self.outputs.len() {
            return Err(ChannelError::Arity {
                expected: self.outputs.len(),
                got: outputs.len(),
            });
        }
        let targets: Vec<(usize, &TopicQueue)> = self
            .outputs
            .iter()
            .enumerate()
            .flat_map(|(i, o)| o.subscribers.iter().map(move |q| (i, q.as_ref())))
            .collect();
        let refs: Vec<&TopicQueue> = targets.iter().map(|(_, q)| *q).collect();
        let mut guards = lock_all(&refs);

        for ((_, q), g) in targets.iter().zip(&guards) {
            if g.closed {
                return Err(ChannelError::Shutdown);
            }
            if let Some(last) = g.last.filter(|&last| last >= job) {
                return Err(ChannelError::OutOfOrder {
                    topic: q.topic.name().to_string(),
                    job,
                    last,
                });
            }
            if g.items.len() >= q.capacity {
                let (seen, _) = q.space.observe();
                let queue = self.outputs.iter().flat_map(|o| &o.subscribers).find(|s| s.id == q.id);
                return Ok(Attempt::Blocked {
                    queue: Arc::clone(queue.expect("target belongs to fanout")),
                    seen,
                });
            }
        }

        for ((i, q), g) in targets.iter().zip(guards.iter_mut()) {
            g.items.push_back(Slot {
                message: Message {
                    topic: q.topic.clone(),
                    job,
                    stamp: finish_time,
                    payload: outputs[*i].clone(),
                    publish_time: finish_time,
                },
                arrival: now,
            });
            g.last = Some(job);
        }
        drop(guards);

        let mut notified: Vec<*const Signal> = Vec::new();
        for (_, q) in &targets {
            let sig = Arc::as_ptr(&q.consumer);
            if !notified.contains(&sig) {
                notified.push(sig);
                q.consumer.notify();
            }
        }
        Ok(Attempt::Sent)
    }

    /// Enqueues one message per output topic, all stamped `finish_time`,
    /// or nothing at all if some destination is full.
    pub fn try_send_all(
        &self,
        job: JobIndex,
        outputs: Vec<Value>,
        finish_time: TimePoint,
        now: TimePoint,
    ) -> Result<SendOutcome, ChannelError> {
        match self.attempt(job, &outputs, finish_time, now)? {
            Attempt::Sent => Ok(SendOutcome::Sent),
            Attempt::Blocked { .. } => Ok(SendOutcome::Full(outputs)),
        }
    }

    /// Like [`try_send_all`](Self::try_send_all) but waits for space instead
    /// of giving up. Arrival times come from `clock`.
    pub fn send_all(
        &self,
        job: JobIndex,
        outputs: Vec<Value>,
        finish_time: TimePoint,
        clock: &dyn Clock,
    ) -> Result<(), ChannelError> {
        loop {
            match self.attempt(job, &outputs, finish_time, clock.now())? {
                Attempt::Sent => return Ok(()),
                Attempt::Blocked { queue, seen } => queue.space.wait_past(seen),
            }
        }
    }
}
