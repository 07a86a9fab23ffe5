//! Canonical cluster state: nodes, services, priority classes, images and
//! tombstones, plus the read-only queries the planners build on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ClusterError;
use crate::labels::{match_constraints, LabelMap, LabelSelector};
use crate::resources::{ResourceVector, Share};
use crate::SimTime;

pub const MAX_PRIORITY_VALUE: i64 = 1_000_000_000;

/// A named priority level that services reference by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorityClass {
    pub name: String,
    pub value: i32,
    #[serde(default)]
    pub global_default: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    #[default]
    Service,
    Job,
}

/// What happens to a running service once it is preempted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    #[default]
    Requeue,
    Drop,
    Delegate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServiceSpec {
    pub id: String,
    #[serde(default)]
    pub kind: ObjectKind,
    #[serde(default)]
    pub request: ResourceVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_class_name: Option<String>,
    #[serde(default, skip_serializing_if = "LabelSelector::is_empty")]
    pub constraints: LabelSelector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: LabelMap,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub owner_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finalizers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_after_finished_secs: Option<u64>,
    #[serde(default)]
    pub eviction_policy: EvictionPolicy,
    /// Sibling that inherits work under [`EvictionPolicy::Delegate`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delegate_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl ServiceSpec {
    pub fn new(id: impl Into<String>, request: ResourceVector) -> Self {
        Self {
            id: id.into(),
            request,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pending,
    Running,
    Completed,
    Terminated,
    Deleting,
    Deleted,
}

impl Phase {
    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Completed | Phase::Terminated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pending => "pending",
            Phase::Running => "running",
            Phase::Completed => "completed",
            Phase::Terminated => "terminated",
            Phase::Deleting => "deleting",
            Phase::Deleted => "deleted",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeletionMode {
    Foreground,
    Background,
}

/// Why an object is being deleted; also the report bucket it lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeletionCategory {
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "cascade")]
    Cascade,
    #[serde(rename = "orphan")]
    Orphan,
    #[serde(rename = "ttl-service")]
    TtlService,
    #[serde(rename = "job")]
    TtlJob,
    #[serde(rename = "image")]
    Image,
    #[serde(rename = "image-policy")]
    ImagePolicy,
}

impl DeletionCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            DeletionCategory::Direct => "direct",
            DeletionCategory::Cascade => "cascade",
            DeletionCategory::Orphan => "orphan",
            DeletionCategory::TtlService => "ttl-service",
            DeletionCategory::TtlJob => "job",
            DeletionCategory::Image => "image",
            DeletionCategory::ImagePolicy => "image-policy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingDeletion {
    pub mode: DeletionMode,
    pub category: DeletionCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceStatus {
    pub phase: Phase,
    pub node_id: Option<String>,
    pub enqueue_time: SimTime,
    pub finish_time: Option<SimTime>,
    pub progress_lost_count: u64,
    pub deletion: Option<PendingDeletion>,
}

impl ServiceStatus {
    pub fn pending(now: SimTime) -> Self {
        Self {
            phase: Phase::Pending,
            node_id: None,
            enqueue_time: now,
            finish_time: None,
            progress_lost_count: 0,
            deletion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Service {
    pub spec: ServiceSpec,
    pub status: ServiceStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Up,
    Down,
}

/// Declarative part of a node, as registered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeSpec {
    pub id: String,
    pub capacity: ResourceVector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub capacity: ResourceVector,
    pub labels: LabelMap,
    pub status: NodeStatus,
    pub placed: BTreeSet<String>,
    /// Resources held for preemptors waiting out the eviction delay.
    pub reserved: BTreeMap<String, ResourceVector>,
    /// Sum of placed requests plus reservations.
    pub allocated: ResourceVector,
}

impl Node {
    pub fn new(spec: NodeSpec) -> Self {
        Self {
            id: spec.id,
            capacity: spec.capacity,
            labels: spec.labels,
            status: NodeStatus::Up,
            placed: BTreeSet::new(),
            reserved: BTreeMap::new(),
            allocated: ResourceVector::ZERO,
        }
    }

    pub fn is_up(&self) -> bool {
        self.status == NodeStatus::Up
    }

    pub fn free(&self) -> ResourceVector {
        self.capacity.saturating_sub(&self.allocated)
    }
}

/// True iff the node's remaining resources cover `request` component-wise.
pub fn resource_fit(node: &Node, request: &ResourceVector) -> Result<bool, ClusterError> {
    if !node.is_up() {
        return Err(ClusterError::NodeUnavailable(node.id.clone()));
    }
    Ok(node.free().covers(request) && node.capacity.covers(&node.allocated))
}

/// Dominant-share utilization of an Up node.
pub fn utilization(node: &Node) -> Result<Share, ClusterError> {
    if !node.is_up() {
        return Err(ClusterError::NodeUnavailable(node.id.clone()));
    }
    node.allocated.dominant_share(&node.capacity)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageSpec {
    pub id: String,
    pub size_bytes: u64,
    #[serde(default)]
    pub last_used: SimTime,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub size_bytes: u64,
    pub last_used: SimTime,
    pub tags: LabelMap,
    pub in_use_by: BTreeSet<String>,
}

impl ImageRecord {
    pub fn new(spec: ImageSpec) -> Self {
        Self {
            id: spec.id,
            size_bytes: spec.size_bytes,
            last_used: spec.last_used,
            tags: spec.tags,
            in_use_by: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterState {
    pub nodes: BTreeMap<String, Node>,
    pub services: BTreeMap<String, Service>,
    pub priority_classes: BTreeMap<String, PriorityClass>,
    pub images: BTreeMap<String, ImageRecord>,
    /// Deleted object ids with their deletion time.
    pub tombstones: BTreeMap<String, SimTime>,
    pub clock: SimTime,
}

/// One broken invariant found by [`validate_state`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub object: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.object, self.rule)
    }
}

impl ClusterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: &str) -> Result<&Node, ClusterError> {
        self.nodes
            .get(id)
            .ok_or_else(|| ClusterError::UnknownNode(id.to_string()))
    }

    pub fn service(&self, id: &str) -> Result<&Service, ClusterError> {
        self.services
            .get(id)
            .ok_or_else(|| ClusterError::UnknownObject(id.to_string()))
    }

    pub fn up_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.is_up())
    }

    pub fn is_live(&self, id: &str) -> bool {
        self.services.contains_key(id)
    }

    /// Live objects listing `owner` among their owner references, in id order.
    pub fn dependents_of(&self, owner: &str) -> Vec<String> {
        self.services
            .values()
            .filter(|s| s.spec.owner_refs.iter().any(|o| o == owner))
            .map(|s| s.spec.id.clone())
            .collect()
    }

    pub fn candidate_nodes<'a>(&'a self, constraints: &'a LabelSelector) -> impl Iterator<Item = &'a Node> + 'a {
        self.up_nodes()
            .filter(move |n| match_constraints(&n.labels, constraints))
    }

    pub fn total_image_bytes(&self) -> u64 {
        self.images.values().map(|i| i.size_bytes).sum()
    }
}

/// Checks every type invariant and referential-integrity rule.
pub fn validate_state(state: &ClusterState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |object: &str, rule: String| {
        out.push(Violation {
            object: object.to_string(),
            rule,
        })
    };

    for node in state.nodes.values() {
        let placed_sum: ResourceVector = node
            .placed
            .iter()
            .filter_map(|id| state.services.get(id))
            .map(|s| s.spec.request)
            .sum();
        let reserved_sum: ResourceVector = node.reserved.values().copied().sum();
        if placed_sum + reserved_sum != node.allocated {
            v(
                &node.id,
                format!(
                    "allocation cache {} does not match placed+reserved {}",
                    node.allocated,
                    placed_sum + reserved_sum
                ),
            );
        }
        match node.status {
            NodeStatus::Up => {
                if !node.capacity.covers(&node.allocated) {
                    v(
                        &node.id,
                        format!("allocated {} exceeds capacity {}", node.allocated, node.capacity),
                    );
                }
            }
            NodeStatus::Down => {
                if !node.placed.is_empty() || !node.reserved.is_empty() {
                    v(&node.id, "Down node still hosts services".to_string());
                }
            }
        }
        for id in &node.placed {
            match state.services.get(id) {
                None => v(&node.id, format!("placed id {id} names no service")),
                Some(s) if s.status.node_id.as_deref() != Some(node.id.as_str()) => {
                    v(&node.id, format!("placed service {id} is not bound to this node"))
                }
                Some(_) => {}
            }
        }
        for id in node.reserved.keys() {
            match state.services.get(id) {
                Some(s) if s.status.phase == Phase::Pending => {}
                _ => v(&node.id, format!("reservation for {id} names no pending service")),
            }
        }
    }

    for (id, svc) in &state.services {
        let st = &svc.status;
        if svc.spec.id != *id {
            v(id, "map key differs from spec id".to_string());
        }
        match (&st.node_id, st.phase) {
            (Some(node_id), Phase::Running) => match state.nodes.get(node_id) {
                None => v(id, format!("service {id} placed on unknown node {node_id}")),
                Some(n) if !n.is_up() => v(id, format!("service {id} placed on Down node {node_id}")),
                Some(n) if !n.placed.contains(id) => {
                    v(id, format!("service {id} missing from node {node_id} placement set"))
                }
                Some(_) => {}
            },
            (None, Phase::Running) => v(id, "Running service has no node".to_string()),
            (Some(node_id), phase) => v(id, format!("{phase} service bound to node {node_id}")),
            (None, _) => {}
        }
        if st.phase.is_finished() && st.finish_time.is_none() {
            v(id, format!("{} service has no finish time", st.phase));
        }
        if st.finish_time.is_some() && !(st.phase.is_finished() || st.phase == Phase::Deleting) {
            v(id, format!("finish time set on {} service", st.phase));
        }
        if st.phase == Phase::Deleted {
            v(id, "Deleted object still live".to_string());
        }
        if (st.phase == Phase::Deleting) != st.deletion.is_some() {
            v(id, "deletion marker inconsistent with phase".to_string());
        }
        if let Some(class) = &svc.spec.priority_class_name {
            if !state.priority_classes.contains_key(class) {
                v(id, format!("unknown priority class {class}"));
            }
        }
        if svc.spec.owner_refs.iter().any(|o| o == id) {
            v(id, "object owns itself".to_string());
        }
        if state.tombstones.contains_key(id) {
            v(id, "id is both live and tombstoned".to_string());
        }
        if let Some(image) = &svc.spec.image {
            let in_use = matches!(st.phase, Phase::Pending | Phase::Running);
            match state.images.get(image) {
                None => v(id, format!("unknown image {image}")),
                Some(img) if img.in_use_by.contains(id) != in_use => {
                    v(image, format!("in_use_by out of sync for {id}"))
                }
                Some(_) => {}
            }
        }
    }

    let mut defaults: Vec<&str> = Vec::new();
    for (name, class) in &state.priority_classes {
        if class.name != *name {
            v(name, "map key differs from class name".to_string());
        }
        if i64::from(class.value) > MAX_PRIORITY_VALUE {
            v(name, format!("value {} exceeds 1000000000", class.value));
        }
        if class.global_default {
            defaults.push(name);
        }
    }
    if defaults.len() > 1 {
        v(
            &defaults.join(","),
            format!("multiple global default priority classes: {}", defaults.join(", ")),
        );
    }

    for img in state.images.values() {
        if img.size_bytes == 0 {
            v(&img.id, "image size must be positive".to_string());
        }
        if img.last_used > state.clock {
            v(
                &img.id,
                format!("last_used {} is after clock {}", img.last_used, state.clock),
            );
        }
        for user in &img.in_use_by {
            if !state.services.contains_key(user) {
                v(&img.id, format!("in_use_by names missing service {user}"));
            }
        }
    }

    out
}
