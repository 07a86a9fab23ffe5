//! Every state change is a [`Mutation`]. The engine and the planners never
//! touch [`ClusterState`] directly; they emit mutations through a [`Journal`],
//! which applies them and appends them to the event log. Replaying a log
//! through the same `apply` reconstructs the final state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    ClusterState, DeletionCategory, DeletionMode, ImageRecord, ImageSpec, Node, NodeSpec, NodeStatus, PendingDeletion,
    Phase, PriorityClass, Service, ServiceSpec, ServiceStatus, MAX_PRIORITY_VALUE,
};
use crate::error::ClusterError;
use crate::resources::ResourceVector;
use crate::scheduler::{resolve_priority, SchedulingQueue};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvictionCause {
    Preempted,
    NodeDown,
    Restart,
}

impl EvictionCause {
    pub fn as_str(self) -> &'static str {
        match self {
            EvictionCause::Preempted => "preempted",
            EvictionCause::NodeDown => "node-down",
            EvictionCause::Restart => "restart",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "payload",
    rename_all = "kebab-case",
    rename_all_fields = "camelCase"
)]
pub enum Mutation {
    NodeRegistered {
        node: NodeSpec,
    },
    PriorityClassRegistered {
        class: PriorityClass,
    },
    ImageRegistered {
        image: ImageSpec,
    },
    Submitted {
        spec: ServiceSpec,
    },
    Enqueued {
        service: String,
        priority: i32,
    },
    Placed {
        service: String,
        node: String,
    },
    /// Holds resources on `node` for a preemptor until it is placed.
    Nominated {
        service: String,
        node: String,
    },
    Unreserved {
        service: String,
        node: String,
    },
    Evicted {
        service: String,
        node: String,
        cause: EvictionCause,
    },
    Dropped {
        service: String,
    },
    Delegated {
        service: String,
        to: String,
    },
    Finished {
        service: String,
        phase: Phase,
    },
    NodeDown {
        node: String,
    },
    NodeUp {
        node: String,
    },
    PriorityClassUpdated {
        class: PriorityClass,
    },
    MigrationStarted {
        service: String,
        from: String,
        to: String,
    },
    MigrationFallback {
        service: String,
        target: String,
    },
    DeletionStarted {
        object: String,
        mode: DeletionMode,
        category: DeletionCategory,
    },
    FinalizerCleared {
        object: String,
        finalizer: String,
    },
    Deleted {
        object: String,
        category: DeletionCategory,
    },
    ImageDeleted {
        image: String,
        category: DeletionCategory,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rule: Option<usize>,
    },
    /// An external request that could not be honored. No state change.
    Rejected {
        event: String,
        reason: String,
    },
}

impl Mutation {
    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::NodeRegistered { .. } => "node-registered",
            Mutation::PriorityClassRegistered { .. } => "priority-class-registered",
            Mutation::ImageRegistered { .. } => "image-registered",
            Mutation::Submitted { .. } => "submitted",
            Mutation::Enqueued { .. } => "enqueued",
            Mutation::Placed { .. } => "placed",
            Mutation::Nominated { .. } => "nominated",
            Mutation::Unreserved { .. } => "unreserved",
            Mutation::Evicted { .. } => "evicted",
            Mutation::Dropped { .. } => "dropped",
            Mutation::Delegated { .. } => "delegated",
            Mutation::Finished { .. } => "finished",
            Mutation::NodeDown { .. } => "node-down",
            Mutation::NodeUp { .. } => "node-up",
            Mutation::PriorityClassUpdated { .. } => "priority-class-updated",
            Mutation::MigrationStarted { .. } => "migration-started",
            Mutation::MigrationFallback { .. } => "migration-fallback",
            Mutation::DeletionStarted { .. } => "deletion-started",
            Mutation::FinalizerCleared { .. } => "finalizer-cleared",
            Mutation::Deleted { .. } => "deleted",
            Mutation::ImageDeleted { .. } => "image-deleted",
            Mutation::Rejected { .. } => "rejected",
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Mutation::*;
        match self {
            NodeRegistered { node } => write!(f, "{} capacity={}", node.id, node.capacity),
            PriorityClassRegistered { class } | PriorityClassUpdated { class } => {
                write!(f, "{} value={}", class.name, class.value)?;
                if class.global_default {
                    f.write_str(" globalDefault")?;
                }
                Ok(())
            }
            ImageRegistered { image } => write!(f, "{} size={}B", image.id, image.size_bytes),
            Submitted { spec } => write!(f, "{} request={}", spec.id, spec.request),
            Enqueued { service, priority } => write!(f, "{service} priority={priority}"),
            Placed { service, node } => write!(f, "{service} -> {node}"),
            Nominated { service, node } => write!(f, "{service} reserved on {node}"),
            Unreserved { service, node } => write!(f, "{service} released on {node}"),
            Evicted { service, node, cause } => write!(f, "{service} from {node} ({})", cause.as_str()),
            Dropped { service } => write!(f, "{service}"),
            Delegated { service, to } => write!(f, "{service} work -> {to}"),
            Finished { service, phase } => write!(f, "{service} {phase}"),
            NodeDown { node } | NodeUp { node } => write!(f, "{node}"),
            MigrationStarted { service, from, to } => write!(f, "{service} {from} -> {to}"),
            MigrationFallback { service, target } => {
                write!(f, "{service} no longer fits {target}, requeued")
            }
            DeletionStarted { object, mode, category } => write!(f, "{object} {mode:?} ({})", category.as_str()),
            FinalizerCleared { object, finalizer } => write!(f, "{object} {finalizer}"),
            Deleted { object, category } => write!(f, "{object} ({})", category.as_str()),
            ImageDeleted { image, category, rule } => {
                write!(f, "{image} ({})", category.as_str())?;
                if let Some(rule) = rule {
                    write!(f, " rule#{rule}")?;
                }
                Ok(())
            }
            Rejected { event, reason } => write!(f, "{event}: {reason}"),
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: SimTime,
    #[serde(flatten)]
    pub mutation: Mutation,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }
}

impl ClusterState {
    /// Applies one mutation at time `now`. Fails without modifying the state
    /// if the mutation is not legal in the current state.
    pub fn apply(&mut self, now: SimTime, m: &Mutation) -> Result<(), ClusterError> {
        if now < self.clock {
            return Err(ClusterError::ClockWentBackwards { now, clock: self.clock });
        }
        self.check(m)?;
        self.clock = now;
        use Mutation::*;
        match m {
            NodeRegistered { node } => {
                self.nodes.insert(node.id.clone(), Node::new(node.clone()));
            }
            PriorityClassRegistered { class } | PriorityClassUpdated { class } => {
                self.priority_classes.insert(class.name.clone(), class.clone());
            }
            ImageRegistered { image } => {
                self.images.insert(image.id.clone(), ImageRecord::new(image.clone()));
            }
            Submitted { spec } => {
                if let Some(image) = &spec.image {
                    let img = self.images.get_mut(image).expect("checked");
                    img.in_use_by.insert(spec.id.clone());
                }
                self.services.insert(
                    spec.id.clone(),
                    Service {
                        spec: spec.clone(),
                        status: ServiceStatus::pending(now),
                    },
                );
            }
            Enqueued { service, .. } => {
                self.svc_mut(service).status.enqueue_time = now;
            }
            Placed { service, node } => {
                self.release_reservation(service);
                let request = self.services[service].spec.request;
                let n = self.nodes.get_mut(node).expect("checked");
                n.placed.insert(service.clone());
                n.allocated = n.allocated + request;
                let svc = self.svc_mut(service);
                svc.status.phase = Phase::Running;
                svc.status.node_id = Some(node.clone());
                if let Some(image) = svc.spec.image.clone() {
                    if let Some(img) = self.images.get_mut(&image) {
                        img.last_used = now;
                    }
                }
            }
            Nominated { service, node } => {
                let request = self.services[service].spec.request;
                let n = self.nodes.get_mut(node).expect("checked");
                n.reserved.insert(service.clone(), request);
                n.allocated = n.allocated + request;
            }
            Unreserved { service, .. } => {
                self.release_reservation(service);
            }
            Evicted { service, .. } | MigrationStarted { service, .. } => {
                self.unbind(service);
                let st = &mut self.svc_mut(service).status;
                st.phase = Phase::Pending;
                st.progress_lost_count += 1;
            }
            Dropped { service } => {
                self.finish(service, Phase::Terminated, now);
            }
            Delegated { service, to } => {
                let lost = std::mem::take(&mut self.svc_mut(service).status.progress_lost_count);
                self.svc_mut(to).status.progress_lost_count += lost;
                self.finish(service, Phase::Terminated, now);
            }
            Finished { service, phase } => {
                self.release_reservation(service);
                self.unbind(service);
                self.finish(service, *phase, now);
            }
            NodeDown { node } => {
                self.nodes.get_mut(node).expect("checked").status = NodeStatus::Down;
            }
            NodeUp { node } => {
                self.nodes.get_mut(node).expect("checked").status = NodeStatus::Up;
            }
            MigrationFallback { .. } | Rejected { .. } => {}
            DeletionStarted { object, mode, category } => {
                self.release_reservation(object);
                self.unbind(object);
                self.release_image(object, now);
                let st = &mut self.svc_mut(object).status;
                st.phase = Phase::Deleting;
                st.deletion = Some(PendingDeletion {
                    mode: *mode,
                    category: *category,
                });
            }
            FinalizerCleared { object, finalizer } => {
                self.svc_mut(object).spec.finalizers.retain(|f| f != finalizer);
            }
            Deleted { object, .. } => {
                self.services.remove(object);
                self.tombstones.insert(object.clone(), now);
            }
            ImageDeleted { image, .. } => {
                self.images.remove(image);
            }
        }
        Ok(())
    }

    fn check(&self, m: &Mutation) -> Result<(), ClusterError> {
        use Mutation::*;
        match m {
            NodeRegistered { node } => {
                if self.nodes.contains_key(&node.id) {
                    return Err(ClusterError::DuplicateId(node.id.clone()));
                }
            }
            PriorityClassRegistered { class } => {
                if self.priority_classes.contains_key(&class.name) {
                    return Err(ClusterError::DuplicateId(class.name.clone()));
                }
                self.check_class(class)?;
            }
            PriorityClassUpdated { class } => {
                if !self.priority_classes.contains_key(&class.name) {
                    return Err(ClusterError::UnknownPriorityClass(class.name.clone()));
                }
                self.check_class(class)?;
            }
            ImageRegistered { image } => {
                if self.images.contains_key(&image.id) {
                    return Err(ClusterError::DuplicateId(image.id.clone()));
                }
                if image.size_bytes == 0 {
                    return Err(ClusterError::InvalidTransition {
                        object: image.id.clone(),
                        reason: "image size must be positive".into(),
                    });
                }
            }
            Submitted { spec } => {
                if self.services.contains_key(&spec.id) {
                    return Err(ClusterError::DuplicateId(spec.id.clone()));
                }
                if self.tombstones.contains_key(&spec.id) {
                    return Err(ClusterError::Tombstoned(spec.id.clone()));
                }
                if let Some(class) = &spec.priority_class_name {
                    if !self.priority_classes.contains_key(class) {
                        return Err(ClusterError::UnknownPriorityClass(class.clone()));
                    }
                }
                for owner in &spec.owner_refs {
                    if *owner == spec.id {
                        return Err(ClusterError::SelfOwnership(spec.id.clone()));
                    }
                    if !self.services.contains_key(owner) {
                        return Err(ClusterError::MissingOwner {
                            object: spec.id.clone(),
                            owner: owner.clone(),
                        });
                    }
                }
                if let Some(image) = &spec.image {
                    if !self.images.contains_key(image) {
                        return Err(ClusterError::UnknownImage(image.clone()));
                    }
                }
            }
            Enqueued { service, .. } | Dropped { service } | MigrationFallback { service, .. } => {
                self.expect_phase(service, Phase::Pending)?;
            }
            Delegated { service, to } => {
                self.expect_phase(service, Phase::Pending)?;
                self.expect_phase(to, Phase::Running)?;
            }
            Placed { service, node } => {
                self.expect_phase(service, Phase::Pending)?;
                let n = self.up_node(node)?;
                let request = self.services[service].spec.request;
                let held = n.reserved.get(service).copied().unwrap_or_default();
                let free = n.free() + held;
                if !free.covers(&request) {
                    return Err(ClusterError::DoesNotFit {
                        service: service.clone(),
                        node: node.clone(),
                    });
                }
            }
            Nominated { service, node } => {
                self.expect_phase(service, Phase::Pending)?;
                if self.reservation_of(service).is_some() {
                    return Err(ClusterError::InvalidTransition {
                        object: service.clone(),
                        reason: "already holds a reservation".into(),
                    });
                }
                let n = self.up_node(node)?;
                if !n.free().covers(&self.services[service].spec.request) {
                    return Err(ClusterError::DoesNotFit {
                        service: service.clone(),
                        node: node.clone(),
                    });
                }
            }
            Unreserved { service, node } => {
                if !self.node(node)?.reserved.contains_key(service) {
                    return Err(ClusterError::InvalidTransition {
                        object: service.clone(),
                        reason: format!("holds no reservation on {node}"),
                    });
                }
            }
            Evicted { service, node, .. }
            | MigrationStarted {
                service, from: node, ..
            } => {
                let svc = self.service(service)?;
                if svc.status.phase != Phase::Running || svc.status.node_id.as_deref() != Some(node.as_str()) {
                    return Err(ClusterError::NotRunning(format!("{service} on {node}")));
                }
            }
            Finished { service, phase } => {
                if !phase.is_finished() {
                    return Err(ClusterError::InvalidTransition {
                        object: service.clone(),
                        reason: format!("cannot finish as {phase}"),
                    });
                }
                let svc = self.service(service)?;
                if !matches!(svc.status.phase, Phase::Pending | Phase::Running) {
                    return Err(ClusterError::InvalidTransition {
                        object: service.clone(),
                        reason: format!("cannot finish from {}", svc.status.phase),
                    });
                }
            }
            NodeDown { node } => {
                let n = self.up_node(node)?;
                if !n.placed.is_empty() || !n.reserved.is_empty() {
                    return Err(ClusterError::InvalidTransition {
                        object: node.clone(),
                        reason: "node still hosts services".into(),
                    });
                }
            }
            NodeUp { node } => {
                if self.node(node)?.is_up() {
                    return Err(ClusterError::InvalidTransition {
                        object: node.clone(),
                        reason: "node is already up".into(),
                    });
                }
            }
            DeletionStarted { object, .. } => {
                if self.service(object)?.status.phase == Phase::Deleting {
                    return Err(ClusterError::AlreadyDeleting(object.clone()));
                }
            }
            FinalizerCleared { object, finalizer } => {
                let svc = self.service(object)?;
                if svc.status.phase != Phase::Deleting {
                    return Err(ClusterError::NotDeleting(object.clone()));
                }
                if !svc.spec.finalizers.contains(finalizer) {
                    return Err(ClusterError::UnknownFinalizer {
                        object: object.clone(),
                        finalizer: finalizer.clone(),
                    });
                }
            }
            Deleted { object, .. } => {
                let svc = self.service(object)?;
                if svc.status.phase != Phase::Deleting {
                    return Err(ClusterError::NotDeleting(object.clone()));
                }
                if !svc.spec.finalizers.is_empty() {
                    return Err(ClusterError::FinalizersPending {
                        object: object.clone(),
                        finalizers: svc.spec.finalizers.clone(),
                    });
                }
            }
            ImageDeleted { image, .. } => {
                let img = self
                    .images
                    .get(image)
                    .ok_or_else(|| ClusterError::UnknownImage(image.clone()))?;
                if !img.in_use_by.is_empty() {
                    return Err(ClusterError::InvalidTransition {
                        object: image.clone(),
                        reason: "image is in use".into(),
                    });
                }
            }
            Rejected { .. } => {}
        }
        Ok(())
    }

    fn check_class(&self, class: &PriorityClass) -> Result<(), ClusterError> {
        if i64::from(class.value) > MAX_PRIORITY_VALUE {
            return Err(ClusterError::PriorityTooLarge {
                name: class.name.clone(),
                value: class.value.into(),
            });
        }
        if class.global_default {
            if let Some(other) = self
                .priority_classes
                .values()
                .find(|c| c.global_default && c.name != class.name)
            {
                return Err(ClusterError::SecondGlobalDefault(
                    class.name.clone(),
                    other.name.clone(),
                ));
            }
        }
        Ok(())
    }

    fn expect_phase(&self, id: &str, phase: Phase) -> Result<(), ClusterError> {
        let svc = self.service(id)?;
        if svc.status.phase == phase {
            return Ok(());
        }
        Err(match phase {
            Phase::Pending => ClusterError::NotPending(id.to_string()),
            Phase::Running => ClusterError::NotRunning(id.to_string()),
            _ => ClusterError::InvalidTransition {
                object: id.to_string(),
                reason: format!("expected {phase}, found {}", svc.status.phase),
            },
        })
    }

    fn up_node(&self, id: &str) -> Result<&Node, ClusterError> {
        let n = self.node(id)?;
        if !n.is_up() {
            return Err(ClusterError::NodeUnavailable(id.to_string()));
        }
        Ok(n)
    }

    /// Node holding a reservation for `service`, if any.
    pub fn reservation_of(&self, service: &str) -> Option<&str> {
        self.nodes
            .values()
            .find(|n| n.reserved.contains_key(service))
            .map(|n| n.id.as_str())
    }

    fn svc_mut(&mut self, id: &str) -> &mut Service {
        self.services.get_mut(id).expect("checked")
    }

    fn release_reservation(&mut self, service: &str) {
        for n in self.nodes.values_mut() {
            if let Some(held) = n.reserved.remove(service) {
                n.allocated = n.allocated.saturating_sub(&held);
            }
        }
    }

    fn unbind(&mut self, service: &str) {
        let svc = self.svc_mut(service);
        let Some(node) = svc.status.node_id.take() else {
            return;
        };
        let request: ResourceVector = svc.spec.request;
        let n = self.nodes.get_mut(&node).expect("bound node exists");
        n.placed.remove(service);
        n.allocated = n.allocated.saturating_sub(&request);
    }

    fn release_image(&mut self, service: &str, now: SimTime) {
        let Some(image) = self.services[service].spec.image.clone() else {
            return;
        };
        if let Some(img) = self.images.get_mut(&image) {
            if img.in_use_by.remove(service) {
                img.last_used = now;
            }
        }
    }

    fn finish(&mut self, service: &str, phase: Phase, now: SimTime) {
        self.release_image(service, now);
        let st = &mut self.svc_mut(service).status;
        st.phase = phase;
        st.finish_time = Some(now);
    }
}

/// Applies mutations to a state and queue and records them.
#[derive(Debug, Clone, Default)]
pub struct Journal {
    pub state: ClusterState,
    pub queue: SchedulingQueue,
    records: Vec<LogRecord>,
    now: SimTime,
}

impl Journal {
    pub fn new(state: ClusterState, queue: SchedulingQueue, now: SimTime) -> Self {
        Self {
            state,
            queue,
            records: Vec::new(),
            now,
        }
    }

    pub fn from_state(state: ClusterState) -> Self {
        let now = state.clock;
        Self::new(state, SchedulingQueue::new(), now)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn set_now(&mut self, now: SimTime) {
        debug_assert!(now >= self.now);
        self.now = now;
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_parts(self) -> (ClusterState, SchedulingQueue, Vec<LogRecord>) {
        (self.state, self.queue, self.records)
    }

    pub fn emit(&mut self, m: Mutation) -> Result<(), ClusterError> {
        self.state.apply(self.now, &m)?;
        self.apply_to_queue(&m)?;
        self.records.push(LogRecord {
            time: self.now,
            mutation: m,
        });
        Ok(())
    }

    /// Enqueues a pending service at its current effective priority.
    pub fn enqueue(&mut self, service: &str) -> Result<(), ClusterError> {
        let spec = &self.state.service(service)?.spec;
        let priority = resolve_priority(spec, &self.state.priority_classes)?;
        self.emit(Mutation::Enqueued {
            service: service.to_string(),
            priority,
        })
    }

    fn apply_to_queue(&mut self, m: &Mutation) -> Result<(), ClusterError> {
        use Mutation::*;
        match m {
            Enqueued { service, priority } => {
                self.queue.enqueue(service, *priority)?;
            }
            Placed { service, .. }
            | Nominated { service, .. }
            | Finished { service, .. }
            | Dropped { service }
            | Delegated { service, .. }
            | DeletionStarted { object: service, .. } => {
                self.queue.remove(service);
            }
            PriorityClassUpdated { .. } => {
                let ids: Vec<String> = self.queue.iter().map(|e| e.service.clone()).collect();
                for id in ids {
                    let spec = &self.state.services[&id].spec;
                    let p = resolve_priority(spec, &self.state.priority_classes)?;
                    self.queue.reprioritize(&id, p);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// A log line that could not be replayed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("log entry {index}: {error}")]
pub struct ReplayError {
    pub index: usize,
    pub error: ClusterError,
}

/// Rebuilds state and queue from an empty cluster by re-applying `records`.
pub fn replay(records: &[LogRecord]) -> Result<Journal, ReplayError> {
    let mut journal = Journal::default();
    for (index, rec) in records.iter().enumerate() {
        if rec.time < journal.now() {
            return Err(ReplayError {
                index,
                error: ClusterError::ClockWentBackwards {
                    now: rec.time,
                    clock: journal.now(),
                },
            });
        }
        journal.set_now(rec.time);
        journal
            .emit(rec.mutation.clone())
            .map_err(|error| ReplayError { index, error })?;
    }
    Ok(journal)
}
