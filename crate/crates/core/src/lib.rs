//! Request scheduling for a roadside unit (RSU) serving passing vehicles,
//! with a deterministic discrete-event simulator to compare policies.
//!
//! Policies: first-deadline-first, smallest-data-first, deadline-times-size,
//! its broadcast-merging variant with earliest/median/mean group deadlines,
//! and a strict multi-level queue over request classes wrapping any of them.

pub mod cli;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod sched;
pub mod traffic;

pub use engine::{reference_simulate, run, service_time, simulate, EngineError, SimSettings};
pub use metrics::{service_ratio, summarize, Fraction, MeanStd, SimReport, SliceStats};
pub use model::{
    ds_value, dsn_value, is_expired, tie_break, Catalog, Clock, DataItem, DsnValue, OpType, PriorityClass,
    Request, ServiceDecision,
};
pub use sched::{Aggregate, BasePolicy, PendingQueue, Policy, SchedContext};
pub use traffic::{generate_workload, ScenarioParams, Workload};
