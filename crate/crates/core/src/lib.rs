//! Deterministic container-orchestration engine and discrete-event
//! simulator.
//!
//! The crate models a cluster of nodes hosting prioritized services and
//! implements three resource controls on top of it: a preemptive
//! priority scheduler, a utilization rebalancer gated by maintenance
//! windows, and a garbage collector with owner references, finalizers, TTLs
//! and ordered image-pruning rules. All state changes flow through the
//! [`journal`], so every run produces a replayable event log.

pub mod builder;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod gc;
pub mod journal;
pub mod labels;
pub mod metrics;
pub mod rebalancer;
pub mod resources;
pub mod scenario;
pub mod scheduler;
pub mod units;

/// Simulated time in whole seconds.
pub type SimTime = u64;

pub use cluster::{
    resource_fit, utilization, validate_state, ClusterState, DeletionCategory, DeletionMode, EvictionPolicy,
    ImageRecord, ImageSpec, Node, NodeSpec, NodeStatus, ObjectKind, Phase, PriorityClass, Service, ServiceSpec,
    ServiceStatus, Violation,
};
pub use engine::{Engine, EngineConfig, EngineError, EventKind, RunOutput, Setup, SimEvent};
pub use error::ClusterError;
pub use gc::{GcConfig, GcPolicyRule, TagFilter, TtlConfig};
pub use journal::{replay, EvictionCause, Journal, LogRecord, Mutation};
pub use labels::{match_constraints, LabelMap, LabelSelector};
pub use metrics::{metrics_summary, MetricsReport};
pub use rebalancer::{imbalance_score, plan_rebalance, RebalanceConfig, Strategy, Window};
pub use resources::{ResourceVector, Share};
pub use scenario::{Diagnostic, DiagnosticCode, ScenarioFile};
pub use scheduler::{plan_preemption, SchedulingQueue};
