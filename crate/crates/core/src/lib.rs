//! Allocation-only core of the `spoton` checkpoint coordinator.
//!
//! Everything in this crate is a pure function over values: the deterministic
//! toy workload, checkpoint manifests and their integrity digest, the
//! Scheduled-Events wire model, the coordinator's decision policies, the run
//! ledger record format, and the spot cost/makespan simulator. IO, processes,
//! HTTP and the CLI live in the `spoton` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod eviction;
pub mod ledger;
pub mod policy;
pub mod spotsim;
pub mod time;
pub mod workload;

pub use checkpoint::{
    checksum, ApplicationCheckpointer, CheckpointError, CheckpointKind, CheckpointManifest,
    Checkpointer, CheckpointerKind, ManifestError, ProgressMarker, ToyCheckpointer,
};
pub use eviction::{
    detect_preempt, notice_budget, EventType, EventsDocument, EvictionEvent, EvictionNotice,
    NoticeBudget,
};
pub use policy::{on_eviction_notice, schedule_next_checkpoint, Action, ActionPlan};
pub use time::Timestamp;
pub use workload::{WorkloadError, WorkloadSpec, WorkloadState};
