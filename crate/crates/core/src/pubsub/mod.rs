//! Publish/subscribe baseline with timestamp-matched joins.

mod runtime;
pub mod sync;

pub use runtime::{
    relay_callback, run_pubsub, sink_callback, source_callback, Callback, CallbackContext, NodeSpec,
    PubSubError, PubSubGraph, StampPolicy, Trigger,
};
pub use sync::{StampedMessage, SyncError, SyncKind, SyncPolicy, Synchronizer, DEFAULT_SYNC_QUEUE_SIZE};
