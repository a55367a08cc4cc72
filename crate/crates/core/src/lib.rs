//! Deterministic discrete-event simulator for container scheduling,
//! rescheduling and autoscaling on a cluster of identical worker nodes.
//!
//! Start with [`config::RunConfig`] and [`engine::run`].

pub mod autoscaler;
pub mod billing;
pub mod cluster;
pub mod config;
pub mod engine;
pub mod event;
pub mod labels;
pub mod log;
pub mod metrics;
pub mod rescheduler;
pub mod resources;
pub mod rng;
pub mod scheduler;
pub mod time;
pub mod workload;

pub use autoscaler::AutoscalerKind;
pub use cluster::{ClusterState, NodeId, TaskId, TaskSpec};
pub use config::{RunConfig, WorkloadSource};
pub use engine::{find_min_static_nodes, run, RunError, RunReport};
pub use rescheduler::ReschedulerKind;
pub use resources::ResourceVector;
pub use scheduler::SchedulerKind;
pub use time::SimTime;
