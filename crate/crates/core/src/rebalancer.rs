//! Utilization rebalancing: detect spread between the busiest and idlest Up
//! nodes and migrate services, a bounded number per step, inside
//! maintenance windows only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{utilization, ClusterState, Phase};
use crate::error::ClusterError;
use crate::journal::{Journal, Mutation};
use crate::labels::{has_no_reschedule, match_constraints};
use crate::resources::{ResourceVector, Share};
use crate::SimTime;

/// Half-open interval `[start, end)` of simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualMove {
    pub service: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    Automatic,
    /// Operator-chosen moves, consumed in order.
    Manual(Vec<ManualMove>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceConfig {
    pub threshold: f64,
    pub max_migrations_per_step: usize,
    pub strategy: Strategy,
    pub windows: Vec<Window>,
}

impl Default for RebalanceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            max_migrations_per_step: 1,
            strategy: Strategy::Automatic,
            windows: Vec::new(),
        }
    }
}

impl RebalanceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold {} is outside [0, 1]", self.threshold));
        }
        if self.max_migrations_per_step == 0 {
            return Err("maxMigrationsPerStep must be positive".into());
        }
        let mut sorted = self.windows.clone();
        sorted.sort_by_key(|w| w.start);
        for w in &sorted {
            if w.start >= w.end {
                return Err(format!("window [{}, {}) is empty", w.start, w.end));
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(format!(
                    "windows [{}, {}) and [{}, {}) overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub service: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MigrationPlan {
    pub moves: Vec<Migration>,
    /// Spread once every move has landed; `None` for an empty plan.
    pub predicted_spread_after: Option<Share>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }
}

pub fn in_maintenance_window(now: SimTime, windows: &[Window]) -> bool {
    windows.iter().any(|w| w.start <= now && now < w.end)
}

/// Spread of dominant-share utilization (max - min) over Up nodes.
pub fn imbalance_score(state: &ClusterState) -> Result<Share, ClusterError> {
    let mut shares = Vec::new();
    for node in state.up_nodes() {
        shares.push(utilization(node)?);
    }
    spread(shares.into_iter()).ok_or(ClusterError::NoUpNodes)
}

fn spread(shares: impl Iterator<Item = Share>) -> Option<Share> {
    let (mut lo, mut hi): (Option<Share>, Option<Share>) = (None, None);
    for s in shares {
        lo = Some(lo.map_or(s, |l| l.min(s)));
        hi = Some(hi.map_or(s, |h| h.max(s)));
    }
    Some(hi?.minus(lo?))
}

/// Working copy of per-node allocation used to evaluate candidate moves
/// without touching the cluster state.
#[derive(Debug, Clone)]
struct LoadView<'a> {
    state: &'a ClusterState,
    allocated: BTreeMap<&'a str, ResourceVector>,
    location: BTreeMap<&'a str, &'a str>,
}

impl<'a> LoadView<'a> {
    fn new(state: &'a ClusterState) -> Self {
        let allocated = state.up_nodes().map(|n| (n.id.as_str(), n.allocated)).collect();
        let location = state
            .services
            .values()
            .filter(|s| s.status.phase == Phase::Running)
            .filter_map(|s| {
                let node = s.status.node_id.as_deref()?;
                Some((s.spec.id.as_str(), node))
            })
            .collect();
        Self {
            state,
            allocated,
            location,
        }
    }

    fn share(&self, node: &str, allocated: &ResourceVector) -> Result<Share, ClusterError> {
        allocated.dominant_share(&self.state.nodes[node].capacity)
    }

    fn spread(&self) -> Result<Option<Share>, ClusterError> {
        let mut shares = Vec::with_capacity(self.allocated.len());
        for (node, alloc) in &self.allocated {
            shares.push(self.share(node, alloc)?);
        }
        Ok(spread(shares.into_iter()))
    }

    fn spread_after(&self, service: &str, source: &str, target: &str) -> Result<Share, ClusterError> {
        let request = self.state.services[service].spec.request;
        let mut shares = Vec::with_capacity(self.allocated.len());
        for (node, alloc) in &self.allocated {
            let alloc = if *node == source {
                alloc.saturating_sub(&request)
            } else if *node == target {
                *alloc + request
            } else {
                *alloc
            };
            shares.push(self.share(node, &alloc)?);
        }
        Ok(spread(shares.into_iter()).unwrap_or(Share::ZERO))
    }

    /// Why `service` may not move to `target`, if it may not.
    fn refusal(&self, service: &str, target: &str) -> Option<String> {
        let Some(svc) = self.state.services.get(service) else {
            return Some("unknown service".into());
        };
        let Some(source) = self.location.get(service) else {
            return Some("not running".into());
        };
        if has_no_reschedule(&svc.spec.labels) {
            return Some("service is labelled no-reschedule".into());
        }
        if *source == target {
            return Some("service already runs there".into());
        }
        let Some(node) = self.state.nodes.get(target) else {
            return Some("unknown node".into());
        };
        let Some(alloc) = self.allocated.get(target) else {
            return Some("node unavailable".into());
        };
        if !match_constraints(&node.labels, &svc.spec.constraints) {
            return Some("constraints do not match".into());
        }
        if !node.capacity.saturating_sub(alloc).covers(&svc.spec.request) {
            return Some("request does not fit".into());
        }
        None
    }

    fn apply(&mut self, service: &'a str, target: &'a str) {
        let request = self.state.services[service].spec.request;
        let source = self.location.insert(service, target).expect("running");
        let src = self.allocated.get_mut(source).expect("up");
        *src = src.saturating_sub(&request);
        let dst = self.allocated.get_mut(target).expect("up");
        *dst = *dst + request;
    }

    /// The single valid move that minimizes the resulting spread, provided
    /// it strictly improves on the current one. Ties: service id, then
    /// target id.
    fn best_move(&self) -> Result<Option<(Migration, Share)>, ClusterError> {
        let Some(current) = self.spread()? else {
            return Ok(None);
        };
        let mut best: Option<(Share, &str, &str, &str)> = None;
        for (&service, &source) in &self.location {
            for &target in self.allocated.keys() {
                if self.refusal(service, target).is_some() {
                    continue;
                }
                let after = self.spread_after(service, source, target)?;
                if after >= current {
                    continue;
                }
                let cand = (after, service, target, source);
                if best.is_none_or(|b| (cand.0, cand.1, cand.2) < (b.0, b.1, b.2)) {
                    best = Some(cand);
                }
            }
        }
        Ok(best.map(|(after, service, target, source)| {
            (
                Migration {
                    service: service.to_string(),
                    source: source.to_string(),
                    target: target.to_string(),
                },
                after,
            )
        }))
    }
}

/// The best single Automatic move on the current state, if any improves
/// the spread.
pub fn best_single_move(state: &ClusterState) -> Result<Option<(Migration, Share)>, ClusterError> {
    LoadView::new(state).best_move()
}

/// Plans up to `max_migrations_per_step` migrations.
///
/// Returns an empty plan outside maintenance windows or when the spread is
/// not above the threshold. Manual moves are validated in order against the
/// state as it will be after the earlier moves.
pub fn plan_rebalance(
    state: &ClusterState,
    config: &RebalanceConfig,
    now: SimTime,
) -> Result<MigrationPlan, ClusterError> {
    if !in_maintenance_window(now, &config.windows) {
        return Ok(MigrationPlan::default());
    }
    let Ok(score) = imbalance_score(state) else {
        return Ok(MigrationPlan::default());
    };
    if score.to_f64() <= config.threshold {
        return Ok(MigrationPlan::default());
    }

    let mut view = LoadView::new(state);
    let mut moves = Vec::new();
    match &config.strategy {
        Strategy::Manual(requested) => {
            for mv in requested.iter().take(config.max_migrations_per_step) {
                if let Some(reason) = view.refusal(&mv.service, &mv.target) {
                    return Err(ClusterError::InvalidMove {
                        service: mv.service.clone(),
                        target: mv.target.clone(),
                        reason,
                    });
                }
                let (service, _) = state.services.get_key_value(&mv.service).expect("checked");
                let (target, _) = state.nodes.get_key_value(&mv.target).expect("checked");
                let source = view.location[service.as_str()].to_string();
                view.apply(service, target);
                moves.push(Migration {
                    service: service.clone(),
                    source,
                    target: target.clone(),
                });
            }
        }
        Strategy::Automatic => {
            while moves.len() < config.max_migrations_per_step {
                let Some((mv, _)) = view.best_move()? else {
                    break;
                };
                let (service, _) = state.services.get_key_value(&mv.service).expect("running");
                let (target, _) = state.nodes.get_key_value(&mv.target).expect("up");
                view.apply(service, target);
                moves.push(mv);
            }
        }
    }
    let predicted_spread_after = if moves.is_empty() { None } else { view.spread()? };
    Ok(MigrationPlan {
        moves,
        predicted_spread_after,
    })
}

/// Evicts the service from its source node; it stays Pending (outside the
/// scheduling queue) until [`land_migration`].
pub fn start_migration(journal: &mut Journal, mv: &Migration) -> Result<(), ClusterError> {
    let svc = journal.state.service(&mv.service)?;
    if svc.status.phase != Phase::Running {
        return Err(ClusterError::NotRunning(mv.service.clone()));
    }
    journal.emit(Mutation::MigrationStarted {
        service: mv.service.clone(),
        from: mv.source.clone(),
        to: mv.target.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Landing {
    Placed,
    /// Target no longer fits; the service went back to the scheduler.
    Fallback,
    /// The service was finished or deleted while in flight.
    Abandoned,
}

/// Places a migrating service on its target, or hands it to the scheduler
/// if the target stopped fitting in the meantime.
pub fn land_migration(journal: &mut Journal, mv: &Migration) -> Result<Landing, ClusterError> {
    let Some(svc) = journal.state.services.get(&mv.service) else {
        return Ok(Landing::Abandoned);
    };
    if svc.status.phase != Phase::Pending || journal.queue.contains(&mv.service) {
        return Ok(Landing::Abandoned);
    }
    let fits = journal.state.nodes.get(&mv.target).is_some_and(|n| {
        n.is_up() && match_constraints(&n.labels, &svc.spec.constraints) && n.free().covers(&svc.spec.request)
    });
    if fits {
        journal.emit(Mutation::Placed {
            service: mv.service.clone(),
            node: mv.target.clone(),
        })?;
        return Ok(Landing::Placed);
    }
    journal.emit(Mutation::MigrationFallback {
        service: mv.service.clone(),
        target: mv.target.clone(),
    })?;
    journal.enqueue(&mv.service)?;
    Ok(Landing::Fallback)
}

/// Evicts and immediately re-places: a zero-delay migration.
pub fn execute_migration(journal: &mut Journal, mv: &Migration) -> Result<Landing, ClusterError> {
    start_migration(journal, mv)?;
    land_migration(journal, mv)
}
