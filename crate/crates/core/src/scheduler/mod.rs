//! Priority-queue scheduling with preemption.
//!
//! Placement first looks for a node that fits without touching anything;
//! only when none exists are strictly-lower-priority services evicted.

mod preemption;
mod queue;

use std::collections::BTreeMap;

pub use preemption::{plan_preemption, PreemptionPlan};
pub use queue::{QueueEntry, SchedulingQueue};

use crate::cluster::{resource_fit, utilization, ClusterState, EvictionPolicy, Phase, PriorityClass, ServiceSpec};
use crate::error::ClusterError;
use crate::journal::{EvictionCause, Journal, LogRecord, Mutation};
use crate::SimTime;

/// Effective priority: the named class's value, else the global default's
/// value, else 0.
pub fn resolve_priority(spec: &ServiceSpec, classes: &BTreeMap<String, PriorityClass>) -> Result<i32, ClusterError> {
    if let Some(name) = &spec.priority_class_name {
        return classes
            .get(name)
            .map(|c| c.value)
            .ok_or_else(|| ClusterError::UnknownPriorityClass(name.clone()));
    }
    Ok(classes
        .values()
        .find(|c| c.global_default)
        .map(|c| c.value)
        .unwrap_or(0))
}

/// The least-utilized Up node that matches the constraints and fits the
/// request; ties go to the smaller node id.
pub fn find_feasible_node(state: &ClusterState, spec: &ServiceSpec) -> Option<String> {
    state
        .candidate_nodes(&spec.constraints)
        .filter(|n| resource_fit(n, &spec.request).unwrap_or(false))
        .filter_map(|n| utilization(n).ok().map(|u| (u, n.id.as_str())))
        .min()
        .map(|(_, id)| id.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvictionAction {
    Requeued,
    Dropped,
    Delegated,
}

/// Decides what becomes of a service that was just evicted (and is now
/// Pending) according to its eviction policy.
pub fn handle_evicted(journal: &mut Journal, service: &str) -> Result<EvictionAction, ClusterError> {
    let spec = &journal.state.service(service)?.spec;
    match spec.eviction_policy {
        EvictionPolicy::Requeue => {}
        EvictionPolicy::Drop => {
            journal.emit(Mutation::Dropped {
                service: service.to_string(),
            })?;
            return Ok(EvictionAction::Dropped);
        }
        EvictionPolicy::Delegate => {
            let sibling = spec.delegate_to.clone().filter(|to| {
                to != service
                    && journal
                        .state
                        .services
                        .get(to)
                        .is_some_and(|s| s.status.phase == Phase::Running)
            });
            if let Some(to) = sibling {
                journal.emit(Mutation::Delegated {
                    service: service.to_string(),
                    to,
                })?;
                return Ok(EvictionAction::Delegated);
            }
        }
    }
    journal.enqueue(service)?;
    Ok(EvictionAction::Requeued)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchedulerOptions {
    /// Delay between evicting victims and placing the preemptor.
    pub eviction_delay_secs: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eviction {
    pub service: String,
    pub node: String,
    pub preemptor: String,
    pub action: EvictionAction,
}

/// A preemptor holding a reservation, to be placed once the eviction delay
/// has passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub service: String,
    pub node: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    /// Queue entries examined, in attempt order.
    pub attempted: Vec<QueueEntry>,
    pub placements: Vec<(String, String)>,
    pub evictions: Vec<Eviction>,
    pub bindings: Vec<Binding>,
}

/// One scheduling pass over a snapshot of the queue. Each entry gets one
/// attempt; services requeued during the pass wait for the next one.
pub fn run_cycle(journal: &mut Journal, opts: &SchedulerOptions) -> Result<CycleReport, ClusterError> {
    let mut report = CycleReport::default();
    let snapshot: Vec<QueueEntry> = journal.queue.iter().collect();
    for entry in snapshot {
        if !journal.queue.contains(&entry.service) {
            continue;
        }
        report.attempted.push(entry.clone());
        let spec = journal.state.service(&entry.service)?.spec.clone();

        if let Some(node) = find_feasible_node(&journal.state, &spec) {
            journal.emit(Mutation::Placed {
                service: spec.id.clone(),
                node: node.clone(),
            })?;
            report.placements.push((spec.id, node));
            continue;
        }

        let Some(plan) = plan_preemption(&journal.state, &spec)? else {
            continue;
        };
        for victim in &plan.victims {
            journal.emit(Mutation::Evicted {
                service: victim.clone(),
                node: plan.node.clone(),
                cause: EvictionCause::Preempted,
            })?;
            let action = handle_evicted(journal, victim)?;
            report.evictions.push(Eviction {
                service: victim.clone(),
                node: plan.node.clone(),
                preemptor: spec.id.clone(),
                action,
            });
        }
        if opts.eviction_delay_secs == 0 {
            journal.emit(Mutation::Placed {
                service: spec.id.clone(),
                node: plan.node.clone(),
            })?;
            report.placements.push((spec.id, plan.node));
        } else {
            journal.emit(Mutation::Nominated {
                service: spec.id.clone(),
                node: plan.node.clone(),
            })?;
            report.bindings.push(Binding {
                service: spec.id,
                node: plan.node,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub report: CycleReport,
    pub state: ClusterState,
    pub queue: SchedulingQueue,
    pub records: Vec<LogRecord>,
}

/// Snapshot-in, snapshot-out form of [`run_cycle`].
pub fn schedule_cycle(
    state: &ClusterState,
    queue: &SchedulingQueue,
    now: SimTime,
    opts: &SchedulerOptions,
) -> Result<CycleOutcome, ClusterError> {
    let mut journal = Journal::new(state.clone(), queue.clone(), now.max(state.clock));
    let report = run_cycle(&mut journal, opts)?;
    let (state, queue, records) = journal.into_parts();
    Ok(CycleOutcome {
        report,
        state,
        queue,
        records,
    })
}
