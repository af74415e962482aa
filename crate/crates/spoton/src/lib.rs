//! Process-level half of the coordinator: the on-disk checkpoint store, the
//! scheduled-events client and mock, the workload child process, the
//! supervision loop, the eviction drill and configuration.

pub mod client;
pub mod clock;
pub mod config;
pub mod coordinator;
pub mod drill;
pub mod external;
pub mod ledger_log;
pub mod mock;
pub mod store;
pub mod worker;

pub use spoton_core as core;
