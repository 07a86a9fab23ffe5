use crate::cluster::{ClusterState, Node, ServiceSpec};
use crate::error::ClusterError;
use crate::resources::{ResourceVector, Share};

use super::resolve_priority;

/// Above this many eligible victims on one node the count-minimizing search
/// is skipped and the greedy-then-prune set is used as-is.
const EXACT_SEARCH_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreemptionPlan {
    pub node: String,
    /// Victims in eviction order.
    pub victims: Vec<String>,
    pub freed: ResourceVector,
    /// Highest effective priority among the victims.
    pub max_victim_priority: i32,
}

impl PreemptionPlan {
    /// Ordering key used to pick between candidate nodes.
    pub fn key(&self) -> (i32, usize, &str) {
        (self.max_victim_priority, self.victims.len(), self.node.as_str())
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    id: String,
    priority: i32,
    request: ResourceVector,
    share: Share,
}

/// Finds the node and victim set that make room for `spec` by evicting
/// strictly-lower-priority services only.
///
/// Per node, victims are taken greedily in eviction order (lowest priority,
/// then largest dominant share, then id) until the request fits; the greedy
/// set fixes the lowest achievable maximum victim priority. Within that
/// bound the smallest covering set is then searched for, falling back to the
/// pruned greedy set on very crowded nodes. Nodes are compared by
/// (max victim priority, victim count, node id).
pub fn plan_preemption(state: &ClusterState, spec: &ServiceSpec) -> Result<Option<PreemptionPlan>, ClusterError> {
    let incoming = resolve_priority(spec, &state.priority_classes)?;
    let mut best: Option<PreemptionPlan> = None;
    for node in state.candidate_nodes(&spec.constraints) {
        let Some(plan) = plan_on_node(state, node, &spec.request, incoming)? else {
            continue;
        };
        if best.as_ref().is_none_or(|b| plan.key() < b.key()) {
            best = Some(plan);
        }
    }
    Ok(best)
}

fn plan_on_node(
    state: &ClusterState,
    node: &Node,
    request: &ResourceVector,
    incoming: i32,
) -> Result<Option<PreemptionPlan>, ClusterError> {
    if !node.capacity.covers(request) {
        return Ok(None);
    }
    let need = request.saturating_sub(&node.free());
    if need.is_zero() {
        return Ok(None);
    }

    let mut candidates = Vec::new();
    for id in &node.placed {
        let svc = state.service(id)?;
        let priority = resolve_priority(&svc.spec, &state.priority_classes)?;
        if priority < incoming {
            candidates.push(Candidate {
                id: id.clone(),
                priority,
                request: svc.spec.request,
                share: svc.spec.request.dominant_share(&node.capacity)?,
            });
        }
    }
    candidates.sort_by(|a, b| {
        a.priority
            .cmp(&b.priority)
            .then(b.share.cmp(&a.share))
            .then(a.id.cmp(&b.id))
    });
    let total: ResourceVector = candidates.iter().map(|c| c.request).sum();
    if !total.covers(&need) {
        return Ok(None);
    }

    let mut greedy: Vec<usize> = Vec::new();
    let mut freed = ResourceVector::ZERO;
    for (i, c) in candidates.iter().enumerate() {
        if freed.covers(&need) {
            break;
        }
        greedy.push(i);
        freed = freed + c.request;
    }
    let max_priority = candidates[*greedy.last().expect("need is nonzero")].priority;

    // Prune in eviction order: drop any victim the rest can do without.
    let mut chosen = greedy;
    let mut i = 0;
    while i < chosen.len() {
        let rest: ResourceVector = chosen
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &k)| candidates[k].request)
            .sum();
        if rest.covers(&need) {
            chosen.remove(i);
        } else {
            i += 1;
        }
    }

    let eligible: Vec<ResourceVector> = candidates
        .iter()
        .take_while(|c| c.priority <= max_priority)
        .map(|c| c.request)
        .collect();
    if eligible.len() <= EXACT_SEARCH_LIMIT {
        for size in 1..chosen.len() {
            let mut picked = Vec::with_capacity(size);
            if first_cover(&eligible, 0, size, ResourceVector::ZERO, &need, &mut picked) {
                chosen = picked;
                break;
            }
        }
    }

    let victims: Vec<String> = chosen.iter().map(|&k| candidates[k].id.clone()).collect();
    let freed = chosen.iter().map(|&k| candidates[k].request).sum();
    let max_victim_priority = chosen
        .iter()
        .map(|&k| candidates[k].priority)
        .max()
        .expect("at least one victim");
    Ok(Some(PreemptionPlan {
        node: node.id.clone(),
        victims,
        freed,
        max_victim_priority,
    }))
}

/// Depth-first search for the first `size`-subset of `items` (in index
/// order) whose sum covers `need`.
fn first_cover(
    items: &[ResourceVector],
    start: usize,
    size: usize,
    acc: ResourceVector,
    need: &ResourceVector,
    picked: &mut Vec<usize>,
) -> bool {
    if picked.len() == size {
        return acc.covers(need);
    }
    let remaining = size - picked.len();
    for i in start..items.len() {
        if items.len() - i < remaining {
            break;
        }
        picked.push(i);
        if first_cover(items, i + 1, size, acc + items[i], need, picked) {
            return true;
        }
        picked.pop();
    }
    false
}
