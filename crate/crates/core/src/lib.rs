//! probekernel: an embedded data engine for programmatic agents.
//!
//! Agents send *probes* (batches of SQL queries plus a brief describing
//! intent). The engine shares work across redundant queries, answers with
//! sampled estimates when the brief allows, remembers grounding facts across
//! turns, attaches steering feedback, and isolates speculative writes in
//! copy-on-write branches.

pub mod approx;
pub mod branch;
pub mod catalog;
pub mod classify;
pub mod config;
pub mod db;
pub mod error;
pub mod exec;
pub mod feedback;
pub mod kernel;
pub mod memory;
pub mod optimizer;
pub mod planner;
pub mod protocol;
pub mod report;
pub mod server;
pub mod similarity;
pub mod trace;
pub mod value;
pub mod workload;

pub use branch::BranchId;
pub use config::Config;
pub use db::{Database, Snapshot};
pub use error::{Error, Result};
pub use exec::{Executor, ResultSet};
pub use kernel::Kernel;
pub use protocol::{parse_probe, Probe, ProbeResponse};
pub use value::{DataType, Row, Value};
