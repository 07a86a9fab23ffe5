//! Garbage collection: cascading deletion along owner references,
//! finalizers, TTL expiry of finished objects, and ordered image pruning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster::{ClusterState, DeletionCategory, DeletionMode, ImageRecord, ObjectKind, Phase};
use crate::error::ClusterError;
use crate::journal::{Journal, LogRecord, Mutation};
use crate::labels::LabelMap;
use crate::scheduler::SchedulingQueue;
use crate::units::{Bytes, Seconds};
use crate::SimTime;

/// Images carrying `internal=true` are only reachable by rules with
/// `all: true`.
pub const INTERNAL_TAG: &str = "internal";

/// Tag filter written as comma-separated `key==value` clauses. Clauses on
/// the same key are alternatives; different keys must all match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagFilter {
    clauses: BTreeMap<String, BTreeSet<String>>,
}

impl TagFilter {
    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn matches(&self, tags: &LabelMap) -> bool {
        self.clauses
            .iter()
            .all(|(k, values)| tags.get(k).is_some_and(|v| values.contains(v)))
    }
}

impl FromStr for TagFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut clauses: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for clause in s.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            let (k, v) = clause
                .split_once("==")
                .ok_or_else(|| format!("filter clause {clause:?} is not key==value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(format!("filter clause {clause:?} has an empty side"));
            }
            clauses.entry(k.to_string()).or_default().insert(v.to_string());
        }
        Ok(Self { clauses })
    }
}

impl fmt::Display for TagFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, values) in &self.clauses {
            for v in values {
                if !first {
                    f.write_str(",")?;
                }
                first = false;
                write!(f, "{k}=={v}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for TagFilter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TagFilter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One step of the image-pruning chain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GcPolicyRule {
    #[serde(default)]
    pub all: bool,
    #[serde(default, skip_serializing_if = "TagFilter::is_empty")]
    pub filters: TagFilter,
    #[serde(default, rename = "keepDuration", skip_serializing_if = "Option::is_none")]
    pub keep_duration: Option<Seconds>,
    #[serde(default, rename = "keepBytes", skip_serializing_if = "Option::is_none")]
    pub keep_bytes: Option<Bytes>,
}

impl GcPolicyRule {
    pub fn validate(&self) -> Result<(), String> {
        if !self.all && self.keep_duration.is_none() && self.keep_bytes.is_none() {
            return Err("rule constrains nothing: set all, keepDuration or keepBytes".into());
        }
        Ok(())
    }

    /// Whether an unused image is deletable under this rule at `now`.
    pub fn selects(&self, image: &ImageRecord, now: SimTime) -> bool {
        if !image.in_use_by.is_empty() {
            return false;
        }
        if !self.all {
            if image.tags.get(INTERNAL_TAG).is_some_and(|v| v == "true") {
                return false;
            }
            if !self.filters.matches(&image.tags) {
                return false;
            }
        }
        let idle = now.saturating_sub(image.last_used);
        self.keep_duration.is_none_or(|d| idle >= d.0)
    }
}

/// The default pruning chain of a common container build cache.
pub fn default_policy() -> Vec<GcPolicyRule> {
    const GB26: Bytes = Bytes(26_000_000_000);
    vec![
        GcPolicyRule {
            all: false,
            filters: "type==source.local,type==exec.cachemount,type==source.git.checkout"
                .parse()
                .expect("static filter"),
            keep_duration: Some(Seconds(48 * 3600)),
            keep_bytes: Some(Bytes(512_000_000)),
        },
        GcPolicyRule {
            keep_duration: Some(Seconds(1440 * 3600)),
            keep_bytes: Some(GB26),
            ..Default::default()
        },
        GcPolicyRule {
            keep_bytes: Some(GB26),
            ..Default::default()
        },
        GcPolicyRule {
            all: true,
            keep_bytes: Some(GB26),
            ..Default::default()
        },
    ]
}

/// Retention periods in seconds; `None` disables that expiry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TtlConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_service_retention: Option<Seconds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unused_image_retention: Option<Seconds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_retention: Option<Seconds>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcConfig {
    pub ttl: TtlConfig,
    pub policy: Vec<GcPolicyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDeletion {
    pub image: String,
    pub size_bytes: u64,
    pub category: DeletionCategory,
    pub rule: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    /// Objects removed, in deletion order.
    pub objects: Vec<(String, DeletionCategory)>,
    pub images: Vec<ImageDeletion>,
}

impl SweepReport {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty() && self.images.is_empty()
    }

    fn absorb(&mut self, other: SweepReport) {
        self.objects.extend(other.objects);
        self.images.extend(other.images);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    /// The target object itself is gone.
    Removed,
    /// The target waits in Deleting for finalizers or dependents.
    InProgress,
    /// The target was already Deleting; nothing changed.
    AlreadyDeleting,
}

/// Starts deleting `object`.
///
/// Foreground removes the object's dependents depth-first (siblings in id
/// order) before the object itself. A dependent is only taken along when
/// every one of its owners is gone or being deleted. Background removes the
/// object at once and leaves the dependents for later sweeps.
pub fn delete_object(
    journal: &mut Journal,
    object: &str,
    mode: DeletionMode,
) -> Result<(DeleteOutcome, SweepReport), ClusterError> {
    let svc = journal.state.service(object)?;
    if svc.status.phase == Phase::Deleting {
        return Ok((DeleteOutcome::AlreadyDeleting, SweepReport::default()));
    }
    journal.emit(Mutation::DeletionStarted {
        object: object.to_string(),
        mode,
        category: DeletionCategory::Direct,
    })?;
    let mut report = SweepReport::default();
    if mode == DeletionMode::Foreground {
        cascade(journal, object, &mut report)?;
    }
    try_remove(journal, object, &mut report)?;
    let outcome = if journal.state.is_live(object) {
        DeleteOutcome::InProgress
    } else {
        DeleteOutcome::Removed
    };
    Ok((outcome, report))
}

fn cascade(journal: &mut Journal, owner: &str, report: &mut SweepReport) -> Result<(), ClusterError> {
    for dep in journal.state.dependents_of(owner) {
        let Some(svc) = journal.state.services.get(&dep) else {
            continue;
        };
        if svc.status.phase == Phase::Deleting {
            continue;
        }
        let held_elsewhere = svc.spec.owner_refs.iter().any(|o| {
            journal
                .state
                .services
                .get(o)
                .is_some_and(|s| s.status.phase != Phase::Deleting)
        });
        if held_elsewhere {
            continue;
        }
        journal.emit(Mutation::DeletionStarted {
            object: dep.clone(),
            mode: DeletionMode::Foreground,
            category: DeletionCategory::Cascade,
        })?;
        cascade(journal, &dep, report)?;
        try_remove(journal, &dep, report)?;
    }
    Ok(())
}

/// Whether a Deleting object may be removed now.
fn removable(state: &ClusterState, id: &str) -> bool {
    let Some(svc) = state.services.get(id) else {
        return false;
    };
    let Some(deletion) = svc.status.deletion else {
        return false;
    };
    if !svc.spec.finalizers.is_empty() {
        return false;
    }
    deletion.mode == DeletionMode::Background
        || state
            .dependents_of(id)
            .iter()
            .all(|d| state.services[d].status.phase != Phase::Deleting)
}

fn try_remove(journal: &mut Journal, id: &str, report: &mut SweepReport) -> Result<(), ClusterError> {
    if !removable(&journal.state, id) {
        return Ok(());
    }
    let category = journal.state.services[id]
        .status
        .deletion
        .expect("removable implies deleting")
        .category;
    journal.emit(Mutation::Deleted {
        object: id.to_string(),
        category,
    })?;
    report.objects.push((id.to_string(), category));
    Ok(())
}

pub fn clear_finalizer(journal: &mut Journal, object: &str, finalizer: &str) -> Result<(), ClusterError> {
    journal.emit(Mutation::FinalizerCleared {
        object: object.to_string(),
        finalizer: finalizer.to_string(),
    })
}

/// Retention that applies to a finished object, if any.
pub fn retention_for(state: &ClusterState, id: &str, ttl: &TtlConfig) -> Option<u64> {
    let spec = &state.services.get(id)?.spec;
    spec.ttl_after_finished_secs.or(match spec.kind {
        ObjectKind::Service => ttl.terminated_service_retention.map(u64::from),
        ObjectKind::Job => ttl.job_retention.map(u64::from),
    })
}

/// One collection pass at the journal's current time:
///
/// 1. objects all of whose owners were deleted before now start deleting;
/// 2. finished objects past their retention start deleting;
/// 3. Deleting objects that are no longer blocked are removed, repeatedly;
/// 4. unused images idle past the image retention are removed, then the
///    policy chain runs.
///
/// Running it twice at the same time changes nothing the second time.
pub fn gc_sweep(journal: &mut Journal, config: &GcConfig) -> Result<SweepReport, ClusterError> {
    let now = journal.now();
    let mut report = SweepReport::default();

    let orphans: Vec<String> = journal
        .state
        .services
        .values()
        .filter(|s| s.status.phase != Phase::Deleting && !s.spec.owner_refs.is_empty())
        .filter(|s| {
            s.spec
                .owner_refs
                .iter()
                .all(|o| journal.state.tombstones.get(o).is_some_and(|&t| t < now))
        })
        .map(|s| s.spec.id.clone())
        .collect();
    for id in orphans {
        journal.emit(Mutation::DeletionStarted {
            object: id,
            mode: DeletionMode::Background,
            category: DeletionCategory::Orphan,
        })?;
    }

    let expired: Vec<(String, DeletionCategory)> = journal
        .state
        .services
        .values()
        .filter(|s| s.status.phase.is_finished())
        .filter_map(|s| {
            let finished = s.status.finish_time?;
            let keep = retention_for(&journal.state, &s.spec.id, &config.ttl)?;
            (finished.saturating_add(keep) <= now).then(|| {
                let category = match s.spec.kind {
                    ObjectKind::Service => DeletionCategory::TtlService,
                    ObjectKind::Job => DeletionCategory::TtlJob,
                };
                (s.spec.id.clone(), category)
            })
        })
        .collect();
    for (id, category) in expired {
        journal.emit(Mutation::DeletionStarted {
            object: id,
            mode: DeletionMode::Background,
            category,
        })?;
    }

    loop {
        let ready: Vec<String> = journal
            .state
            .services
            .keys()
            .filter(|id| removable(&journal.state, id))
            .cloned()
            .collect();
        if ready.is_empty() {
            break;
        }
        for id in ready {
            try_remove(journal, &id, &mut report)?;
        }
    }

    if let Some(keep) = config.ttl.unused_image_retention {
        let stale: Vec<String> = journal
            .state
            .images
            .values()
            .filter(|i| i.in_use_by.is_empty() && now.saturating_sub(i.last_used) >= keep.0)
            .map(|i| i.id.clone())
            .collect();
        for image in stale {
            let size_bytes = journal.state.images[&image].size_bytes;
            journal.emit(Mutation::ImageDeleted {
                image: image.clone(),
                category: DeletionCategory::Image,
                rule: None,
            })?;
            report.images.push(ImageDeletion {
                image,
                size_bytes,
                category: DeletionCategory::Image,
                rule: None,
            });
        }
    }
    if !config.policy.is_empty() {
        report.absorb(prune_images(journal, &config.policy)?);
    }
    Ok(report)
}

/// Pure pruning plan: which images the rule chain deletes, in order.
///
/// Each rule deletes its candidates least-recently-used first (ties by id)
/// while the whole store exceeds the rule's byte budget; without a budget it
/// deletes every candidate. Later rules see the store after earlier ones.
pub fn plan_prune(images: &BTreeMap<String, ImageRecord>, rules: &[GcPolicyRule], now: SimTime) -> Vec<ImageDeletion> {
    let mut store: BTreeMap<&str, &ImageRecord> = images.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut total: u64 = store.values().map(|i| i.size_bytes).sum();
    let mut out = Vec::new();
    for (index, rule) in rules.iter().enumerate() {
        let mut candidates: Vec<&ImageRecord> = store.values().copied().filter(|i| rule.selects(i, now)).collect();
        candidates.sort_by(|a, b| a.last_used.cmp(&b.last_used).then(a.id.cmp(&b.id)));
        for img in candidates {
            if rule.keep_bytes.is_some_and(|k| total <= k.0) {
                break;
            }
            store.remove(img.id.as_str());
            total -= img.size_bytes;
            out.push(ImageDeletion {
                image: img.id.clone(),
                size_bytes: img.size_bytes,
                category: DeletionCategory::ImagePolicy,
                rule: Some(index),
            });
        }
    }
    out
}

/// Applies the pruning chain through the journal.
pub fn prune_images(journal: &mut Journal, rules: &[GcPolicyRule]) -> Result<SweepReport, ClusterError> {
    let plan = plan_prune(&journal.state.images, rules, journal.now());
    for d in &plan {
        journal.emit(Mutation::ImageDeleted {
            image: d.image.clone(),
            category: d.category,
            rule: d.rule,
        })?;
    }
    Ok(SweepReport {
        objects: Vec::new(),
        images: plan,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub state: ClusterState,
    pub records: Vec<LogRecord>,
}

/// Snapshot-in, snapshot-out form of [`gc_sweep`].
pub fn sweep(state: &ClusterState, now: SimTime, config: &GcConfig) -> Result<SweepOutcome, ClusterError> {
    let mut journal = Journal::new(state.clone(), SchedulingQueue::new(), now.max(state.clock));
    let report = gc_sweep(&mut journal, config)?;
    let (state, _, records) = journal.into_parts();
    Ok(SweepOutcome { report, state, records })
}
