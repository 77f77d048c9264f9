//! DAG-native task runtime.
//!
//! Subtasks are plain functions: arguments are read from input topics and
//! return values are written to output topics. A DAG is described once,
//! validated at commit, and then executed job by job under a
//! completion-boundary rule. A callback-style publish/subscribe runtime is
//! included as a baseline for measuring join latency.

pub mod bench;
pub mod builder;
pub mod channels;
pub mod dispatch;
pub mod executor;
pub mod model;
pub mod pubsub;
pub mod time;
pub mod trace;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
