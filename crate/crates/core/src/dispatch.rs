//! Scheduling primitives shared by both runtimes: a static-priority ready
//! queue, a discrete-event timeline for virtual time, and a worker pool for
//! wall-clock runs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Sender};

use crate::time::TimePoint;

/// Dispatch key of a runnable activation.
///
/// Compared lexicographically: lower priority value first, then earlier
/// ready time, then registration order. `seq` makes every key unique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReadyKey {
    pub priority: i32,
    pub ready_time: TimePoint,
    /// Registration order, typically `(dag, subtask)` positions.
    pub order: (usize, usize),
    pub seq: u64,
}

struct Ready<T> {
    key: ReadyKey,
    item: T,
}

impl<T> PartialEq for Ready<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<T> Eq for Ready<T> {}

impl<T> PartialOrd for Ready<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Ready<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

/// Priority-ordered set of runnable activations.
pub struct ReadyQueue<T> {
    heap: BinaryHeap<Reverse<Ready<T>>>,
    seq: u64,
}

impl<T> Default for ReadyQueue<T> {
    fn default() -> Self {
        ReadyQueue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }
}

impl<T> ReadyQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, priority: i32, ready_time: TimePoint, order: (usize, usize), item: T) {
        let key = ReadyKey {
            priority,
            ready_time,
            order,
            seq: self.seq,
        };
        self.seq += 1;
        self.heap.push(Reverse(Ready { key, item }));
    }

    /// Removes the most urgent activation.
    pub fn pop(&mut self) -> Option<(ReadyKey, T)> {
        self.heap.pop().map(|Reverse(r)| (r.key, r.item))
    }

    pub fn peek(&self) -> Option<&ReadyKey> {
        self.heap.peek().map(|Reverse(r)| &r.key)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

struct Timed<E> {
    at: (TimePoint, u8, u64),
    event: E,
}

impl<E> PartialEq for Timed<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at
    }
}

impl<E> Eq for Timed<E> {}

impl<E> PartialOrd for Timed<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Timed<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at.cmp(&other.at)
    }
}

/// Pending events of a virtual-time run, ordered by `(time, class, insertion)`.
pub struct Timeline<E> {
    heap: BinaryHeap<Reverse<Timed<E>>>,
    seq: u64,
}

impl<E> Default for Timeline<E> {
    fn default() -> Self {
        Timeline {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }
}

impl<E> Timeline<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `event` at `time`. Among events at one time, lower classes
    /// come first; equal classes keep insertion order.
    pub fn push(&mut self, time: TimePoint, class: u8, event: E) {
        self.heap.push(Reverse(Timed {
            at: (time, class, self.seq),
            event,
        }));
        self.seq += 1;
    }

    pub fn next_time(&self) -> Option<TimePoint> {
        self.heap.peek().map(|Reverse(t)| t.at.0)
    }

    pub fn pop(&mut self) -> Option<(TimePoint, E)> {
        self.heap.pop().map(|Reverse(t)| (t.at.0, t.event))
    }

    /// Pops the next event only if it is due at `time`.
    pub fn pop_at(&mut self, time: TimePoint) -> Option<E> {
        if self.next_time() == Some(time) {
            self.pop().map(|(_, e)| e)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Fixed set of threads running submitted jobs with one handler.
pub(crate) struct WorkerPool<J: Send + 'static> {
    tx: Option<Sender<J>>,
    handles: Vec<JoinHandle<()>>,
}

impl<J: Send + 'static> WorkerPool<J> {
    pub(crate) fn new<F>(workers: usize, handler: F) -> Self
    where
        F: Fn(J) + Send + Sync + Clone + 'static,
    {
        let (tx, rx) = unbounded::<J>();
        let handles = (0..workers)
            .map(|i| {
                let rx = rx.clone();
                let handler = handler.clone();
                std::thread::Builder::new()
                    .name(format!("worker-{i}"))
                    .spawn(move || {
                        for job in rx {
                            handler(job);
                        }
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        WorkerPool {
            tx: Some(tx),
            handles,
        }
    }

    pub(crate) fn submit(&self, job: J) {
        self.tx
            .as_ref()
            .expect("pool is running")
            .send(job)
            .expect("workers alive");
    }
}

impl<J: Send + 'static> Drop for WorkerPool<J> {
    fn drop(&mut self) {
        self.tx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
