//! Scenario files: a YAML description of the initial cluster, controller
//! configuration and a timed event script.
//!
//! ```yaml
//! nodes:
//!   - id: node
//!     capacity: { cpu: 4000, memory: 16GiB }
//! priorityClasses:
//!   - { name: high-priority, value: 1000000 }
//! services:
//!   - { id: api, request: { cpu: 1500 }, priorityClassName: high-priority }
//!   - { id: batch, request: { cpu: 500 }, level: 3 }
//! events:
//!   - { time: 10, kind: nodeDown, node: node }
//! ```
//!
//! `level: L` (1 is the most important, up to 10) stands for a priority class
//! named `level-L` with value `1000 * (11 - L)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    DeletionMode, EvictionPolicy, ImageSpec, NodeSpec, ObjectKind, Phase, PriorityClass, ServiceSpec,
    MAX_PRIORITY_VALUE,
};
use crate::engine::{EngineConfig, EventKind, Setup, SimEvent};
use crate::gc::{GcConfig, GcPolicyRule, TtlConfig};
use crate::labels::{LabelMap, LabelSelector};
use crate::rebalancer::{ManualMove, RebalanceConfig, Strategy, Window};
use crate::resources::ResourceVector;
use crate::units::{Bytes, Millicores, Seconds};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourcesDecl {
    #[serde(default)]
    pub cpu: Millicores,
    #[serde(default)]
    pub memory: Bytes,
    #[serde(default)]
    pub disk: Bytes,
}

impl From<ResourcesDecl> for ResourceVector {
    fn from(r: ResourcesDecl) -> Self {
        ResourceVector::new(r.cpu.0, r.memory.0, r.disk.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NodeDecl {
    pub id: String,
    pub capacity: ResourcesDecl,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ImageDecl {
    pub id: String,
    pub size: Bytes,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: LabelMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServiceDecl {
    pub id: String,
    #[serde(default)]
    pub kind: ObjectKind,
    #[serde(default)]
    pub request: ResourcesDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default, skip_serializing_if = "LabelSelector::is_empty")]
    pub constraints: LabelSelector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: LabelMap,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub owner_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finalizers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_after_finished: Option<Seconds>,
    #[serde(default)]
    pub eviction_policy: EvictionPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delegate_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EngineDecl {
    #[serde(default)]
    pub scheduler_period: Seconds,
    #[serde(default = "default_gc_period")]
    pub gc_sweep_period: Seconds,
    #[serde(default = "default_eviction_delay")]
    pub eviction_delay: Seconds,
}

fn default_gc_period() -> Seconds {
    Seconds(60)
}

fn default_eviction_delay() -> Seconds {
    Seconds(1)
}

impl Default for EngineDecl {
    fn default() -> Self {
        Self {
            scheduler_period: Seconds(0),
            gc_sweep_period: default_gc_period(),
            eviction_delay: default_eviction_delay(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyDecl {
    #[default]
    Automatic,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowDecl {
    pub start: Seconds,
    pub end: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RebalanceDecl {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_k")]
    pub max_migrations_per_step: usize,
    #[serde(default)]
    pub strategy: StrategyDecl,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moves: Vec<ManualMove>,
    #[serde(default)]
    pub windows: Vec<WindowDecl>,
}

fn default_threshold() -> f64 {
    RebalanceConfig::default().threshold
}

fn default_k() -> usize {
    1
}

impl Default for RebalanceDecl {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            max_migrations_per_step: default_k(),
            strategy: StrategyDecl::Automatic,
            moves: Vec::new(),
            windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum EventDecl {
    SubmitService {
        service: ServiceDecl,
    },
    CompleteService {
        service: String,
        #[serde(default = "completed")]
        phase: Phase,
    },
    NodeDown {
        node: String,
    },
    NodeUp {
        node: String,
    },
    DeleteObject {
        object: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<DeletionMode>,
    },
    UpdatePriorityClass {
        class: PriorityClass,
    },
    ManualRebalance {
        moves: Vec<ManualMove>,
    },
    Tick,
    FullClusterRestart,
    ClearFinalizer {
        object: String,
        finalizer: String,
    },
}

fn completed() -> Phase {
    Phase::Completed
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time: Seconds,
    #[serde(flatten)]
    pub event: EventDecl,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub engine: EngineDecl,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub priority_classes: Vec<PriorityClass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageDecl>,
    #[serde(default)]
    pub services: Vec<ServiceDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gc_policy: Vec<GcPolicyRule>,
    #[serde(default)]
    pub ttl: TtlConfig,
    #[serde(default)]
    pub rebalance: RebalanceDecl,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    Io,
    Syntax,
    UnknownPriorityClass,
    DanglingReference,
    DuplicateId,
    InvalidValue,
    UnsortedEvents,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::Io => "io",
            DiagnosticCode::Syntax => "syntax",
            DiagnosticCode::UnknownPriorityClass => "unknown-priority-class",
            DiagnosticCode::DanglingReference => "dangling-reference",
            DiagnosticCode::DuplicateId => "duplicate-id",
            DiagnosticCode::InvalidValue => "invalid-value",
            DiagnosticCode::UnsortedEvents => "unsorted-events",
        }
    }
}

/// One problem found in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    /// Field path such as `services[2].priorityClassName`; empty for
    /// file-level problems.
    pub path: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl Diagnostic {
    pub fn new(code: DiagnosticCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            path: path.into(),
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]", self.code.as_str())?;
        if let (Some(line), Some(col)) = (self.line, self.column) {
            write!(f, " {line}:{col}")?;
        }
        if !self.path.is_empty() {
            write!(f, " {}", self.path)?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, Diagnostic> {
    if text.trim().is_empty() {
        return Err(Diagnostic::new(DiagnosticCode::Syntax, "", "scenario file is empty"));
    }
    serde_yaml::from_str(text).map_err(|e| {
        let mut d = Diagnostic::new(DiagnosticCode::Syntax, "", e.to_string());
        if let Some(loc) = e.location() {
            d.line = Some(loc.line());
            d.column = Some(loc.column());
        }
        d
    })
}

pub fn to_yaml(scenario: &ScenarioFile) -> String {
    serde_yaml::to_string(scenario).expect("scenario always serializes")
}

pub const LEVEL_MIN: u32 = 1;
pub const LEVEL_MAX: u32 = 10;

pub fn level_class_name(level: u32) -> String {
    format!("level-{level}")
}

/// Priority value a scenario `level` stands for.
pub fn level_value(level: u32) -> i32 {
    1000 * (11 - level as i32)
}

/// Checks a parsed scenario; an empty result means it will compile.
pub fn validate(s: &ScenarioFile) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |code, path: String, msg: String| out.push(Diagnostic::new(code, path, msg));

    let mut node_ids = BTreeSet::new();
    for (i, n) in s.nodes.iter().enumerate() {
        if !node_ids.insert(n.id.as_str()) {
            err(
                DiagnosticCode::DuplicateId,
                format!("nodes[{i}].id"),
                format!("duplicate node id {:?}", n.id),
            );
        }
    }

    let mut class_names: BTreeSet<String> = BTreeSet::new();
    let mut defaults = Vec::new();
    for (i, c) in s.priority_classes.iter().enumerate() {
        if !class_names.insert(c.name.clone()) {
            err(
                DiagnosticCode::DuplicateId,
                format!("priorityClasses[{i}].name"),
                format!("duplicate priority class {:?}", c.name),
            );
        }
        if i64::from(c.value) > MAX_PRIORITY_VALUE {
            err(
                DiagnosticCode::InvalidValue,
                format!("priorityClasses[{i}].value"),
                format!("value {} exceeds 1000000000", c.value),
            );
        }
        if c.global_default {
            defaults.push(c.name.as_str());
        }
    }
    if defaults.len() > 1 {
        err(
            DiagnosticCode::InvalidValue,
            "priorityClasses".into(),
            format!("more than one globalDefault class: {}", defaults.join(", ")),
        );
    }
    let updated: BTreeSet<String> = s
        .events
        .iter()
        .filter_map(|e| match &e.event {
            EventDecl::UpdatePriorityClass { class } => Some(class.name.clone()),
            _ => None,
        })
        .collect();

    let mut image_ids = BTreeSet::new();
    for (i, img) in s.images.iter().enumerate() {
        if !image_ids.insert(img.id.as_str()) {
            err(
                DiagnosticCode::DuplicateId,
                format!("images[{i}].id"),
                format!("duplicate image id {:?}", img.id),
            );
        }
        if img.size.0 == 0 {
            err(
                DiagnosticCode::InvalidValue,
                format!("images[{i}].size"),
                "image size must be positive".into(),
            );
        }
    }

    // every service id in declaration order: initial ones, then submissions
    let mut decls: Vec<(String, &ServiceDecl)> = s
        .services
        .iter()
        .enumerate()
        .map(|(i, d)| (format!("services[{i}]"), d))
        .collect();
    for (i, e) in s.events.iter().enumerate() {
        if let EventDecl::SubmitService { service } = &e.event {
            decls.push((format!("events[{i}].service"), service));
        }
    }
    let all_services: BTreeSet<&str> = decls.iter().map(|(_, d)| d.id.as_str()).collect();

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for (path, d) in &decls {
        if !seen.insert(d.id.as_str()) {
            err(
                DiagnosticCode::DuplicateId,
                format!("{path}.id"),
                format!("duplicate service id {:?}", d.id),
            );
        }
        match (&d.priority_class_name, d.level) {
            (Some(_), Some(_)) => err(
                DiagnosticCode::InvalidValue,
                format!("{path}.level"),
                "set either priorityClassName or level, not both".into(),
            ),
            (Some(name), None) if !class_names.contains(name) && !updated.contains(name) => err(
                DiagnosticCode::UnknownPriorityClass,
                format!("{path}.priorityClassName"),
                format!("unknown priority class {name:?}"),
            ),
            (None, Some(level)) if !(LEVEL_MIN..=LEVEL_MAX).contains(&level) => err(
                DiagnosticCode::InvalidValue,
                format!("{path}.level"),
                format!("level {level} is outside {LEVEL_MIN}..={LEVEL_MAX}"),
            ),
            (None, Some(level)) => {
                let name = level_class_name(level);
                if let Some(c) = s.priority_classes.iter().find(|c| c.name == name) {
                    if c.value != level_value(level) {
                        err(
                            DiagnosticCode::InvalidValue,
                            format!("{path}.level"),
                            format!(
                                "class {name:?} is declared with value {} but level {level} means {}",
                                c.value,
                                level_value(level)
                            ),
                        );
                    }
                }
            }
            _ => {}
        }
        for (j, owner) in d.owner_refs.iter().enumerate() {
            if *owner == d.id {
                err(
                    DiagnosticCode::InvalidValue,
                    format!("{path}.ownerRefs[{j}]"),
                    "object cannot own itself".into(),
                );
            } else if !seen.contains(owner.as_str()) {
                let why = if all_services.contains(owner.as_str()) {
                    "is declared after its dependent"
                } else {
                    "does not exist"
                };
                err(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.ownerRefs[{j}]"),
                    format!("owner {owner:?} {why}"),
                );
            }
        }
        if let Some(img) = &d.image {
            if !image_ids.contains(img.as_str()) {
                err(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.image"),
                    format!("unknown image {img:?}"),
                );
            }
        }
        if let Some(node) = &d.initial_node {
            if !node_ids.contains(node.as_str()) {
                err(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.initialNode"),
                    format!("unknown node {node:?}"),
                );
            }
        }
        if let Some(to) = &d.delegate_to {
            if !all_services.contains(to.as_str()) {
                err(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.delegateTo"),
                    format!("unknown service {to:?}"),
                );
            }
        }
        if d.delegate_to.is_some() != (d.eviction_policy == EvictionPolicy::Delegate) {
            err(
                DiagnosticCode::InvalidValue,
                format!("{path}.delegateTo"),
                "delegateTo is required by, and only allowed with, evictionPolicy delegate".into(),
            );
        }
    }

    for (i, rule) in s.gc_policy.iter().enumerate() {
        if let Err(m) = rule.validate() {
            err(DiagnosticCode::InvalidValue, format!("gcPolicy[{i}]"), m);
        }
    }
    if let Err(m) = rebalance_config(&s.rebalance).validate() {
        err(DiagnosticCode::InvalidValue, "rebalance".into(), m);
    }
    if s.rebalance.strategy == StrategyDecl::Automatic && !s.rebalance.moves.is_empty() {
        err(
            DiagnosticCode::InvalidValue,
            "rebalance.moves".into(),
            "moves require strategy manual".into(),
        );
    }
    let check_moves = |path: String, moves: &[ManualMove], out: &mut Vec<Diagnostic>| {
        for (j, m) in moves.iter().enumerate() {
            if !all_services.contains(m.service.as_str()) {
                out.push(Diagnostic::new(
                    DiagnosticCode::DanglingReference,
                    format!("{path}[{j}].service"),
                    format!("unknown service {:?}", m.service),
                ));
            }
            if !node_ids.contains(m.target.as_str()) {
                out.push(Diagnostic::new(
                    DiagnosticCode::DanglingReference,
                    format!("{path}[{j}].target"),
                    format!("unknown node {:?}", m.target),
                ));
            }
        }
    };
    check_moves("rebalance.moves".into(), &s.rebalance.moves, &mut out);

    let mut last = 0;
    for (i, e) in s.events.iter().enumerate() {
        let path = format!("events[{i}]");
        if e.time.0 < last {
            out.push(Diagnostic::new(
                DiagnosticCode::UnsortedEvents,
                format!("{path}.time"),
                format!("time {} comes after an event at {last}", e.time.0),
            ));
        }
        last = last.max(e.time.0);
        let node_ref = |field: &str, node: &str, out: &mut Vec<Diagnostic>| {
            if !node_ids.contains(node) {
                out.push(Diagnostic::new(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.{field}"),
                    format!("unknown node {node:?}"),
                ));
            }
        };
        let service_ref = |field: &str, id: &str, out: &mut Vec<Diagnostic>| {
            if !all_services.contains(id) {
                out.push(Diagnostic::new(
                    DiagnosticCode::DanglingReference,
                    format!("{path}.{field}"),
                    format!("unknown service {id:?}"),
                ));
            }
        };
        match &e.event {
            EventDecl::NodeDown { node } | EventDecl::NodeUp { node } => node_ref("node", node, &mut out),
            EventDecl::CompleteService { service, phase } => {
                service_ref("service", service, &mut out);
                if !phase.is_finished() {
                    out.push(Diagnostic::new(
                        DiagnosticCode::InvalidValue,
                        format!("{path}.phase"),
                        format!("{phase} is not a finished phase"),
                    ));
                }
            }
            EventDecl::DeleteObject { object, .. } | EventDecl::ClearFinalizer { object, .. } => {
                service_ref("object", object, &mut out)
            }
            EventDecl::UpdatePriorityClass { class } => {
                if i64::from(class.value) > MAX_PRIORITY_VALUE {
                    out.push(Diagnostic::new(
                        DiagnosticCode::InvalidValue,
                        format!("{path}.class.value"),
                        format!("value {} exceeds 1000000000", class.value),
                    ));
                }
            }
            EventDecl::ManualRebalance { moves } => check_moves(format!("{path}.moves"), moves, &mut out),
            EventDecl::SubmitService { .. } | EventDecl::Tick | EventDecl::FullClusterRestart => {}
        }
    }
    out
}

fn rebalance_config(r: &RebalanceDecl) -> RebalanceConfig {
    RebalanceConfig {
        threshold: r.threshold,
        max_migrations_per_step: r.max_migrations_per_step,
        strategy: match r.strategy {
            StrategyDecl::Automatic => Strategy::Automatic,
            StrategyDecl::Manual => Strategy::Manual(r.moves.clone()),
        },
        windows: r
            .windows
            .iter()
            .map(|w| Window {
                start: w.start.0,
                end: w.end.0,
            })
            .collect(),
    }
}

/// Engine inputs produced from a valid scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledScenario {
    pub setup: Setup,
    pub events: Vec<SimEvent>,
    pub config: EngineConfig,
}

fn service_spec(d: &ServiceDecl) -> ServiceSpec {
    ServiceSpec {
        id: d.id.clone(),
        kind: d.kind,
        request: d.request.into(),
        priority_class_name: d.priority_class_name.clone().or_else(|| d.level.map(level_class_name)),
        constraints: d.constraints.clone(),
        labels: d.labels.clone(),
        owner_refs: d.owner_refs.clone(),
        finalizers: d.finalizers.clone(),
        ttl_after_finished_secs: d.ttl_after_finished.map(u64::from),
        eviction_policy: d.eviction_policy,
        delegate_to: d.delegate_to.clone(),
        image: d.image.clone(),
    }
}

fn submit(d: &ServiceDecl) -> EventKind {
    EventKind::SubmitService {
        spec: service_spec(d),
        initial_node: d.initial_node.clone(),
    }
}

/// Validates and lowers a scenario into engine inputs. Initial services
/// become submissions at time 0, ahead of any scripted event.
pub fn compile(s: &ScenarioFile) -> Result<CompiledScenario, Vec<Diagnostic>> {
    let diagnostics = validate(s);
    if !diagnostics.is_empty() {
        return Err(diagnostics);
    }

    let mut classes = s.priority_classes.clone();
    let levels: BTreeSet<u32> = s
        .services
        .iter()
        .chain(s.events.iter().filter_map(|e| match &e.event {
            EventDecl::SubmitService { service } => Some(service),
            _ => None,
        }))
        .filter_map(|d| d.level)
        .collect();
    for level in levels {
        let name = level_class_name(level);
        if !classes.iter().any(|c| c.name == name) {
            classes.push(PriorityClass {
                name,
                value: level_value(level),
                global_default: false,
                description: format!("scenario level {level}"),
            });
        }
    }

    let setup = Setup {
        nodes: s
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id.clone(),
                capacity: n.capacity.into(),
                labels: n.labels.clone(),
            })
            .collect(),
        priority_classes: classes,
        images: s
            .images
            .iter()
            .map(|i| ImageSpec {
                id: i.id.clone(),
                size_bytes: i.size.0,
                last_used: 0,
                tags: i.tags.clone(),
            })
            .collect(),
    };

    let mut events: Vec<SimEvent> = s
        .services
        .iter()
        .map(|d| SimEvent {
            time: 0,
            kind: submit(d),
        })
        .collect();
    for e in &s.events {
        let kind = match &e.event {
            EventDecl::SubmitService { service } => submit(service),
            EventDecl::CompleteService { service, phase } => EventKind::CompleteService {
                service: service.clone(),
                phase: *phase,
            },
            EventDecl::NodeDown { node } => EventKind::NodeDown { node: node.clone() },
            EventDecl::NodeUp { node } => EventKind::NodeUp { node: node.clone() },
            EventDecl::DeleteObject { object, mode } => EventKind::DeleteObject {
                object: object.clone(),
                mode: mode.unwrap_or(DeletionMode::Background),
            },
            EventDecl::UpdatePriorityClass { class } => EventKind::UpdatePriorityClass { class: class.clone() },
            EventDecl::ManualRebalance { moves } => EventKind::ManualRebalance { moves: moves.clone() },
            EventDecl::Tick => EventKind::Tick,
            EventDecl::FullClusterRestart => EventKind::FullClusterRestart,
            EventDecl::ClearFinalizer { object, finalizer } => EventKind::ClearFinalizer {
                object: object.clone(),
                finalizer: finalizer.clone(),
            },
        };
        events.push(SimEvent { time: e.time.0, kind });
    }

    let config = EngineConfig {
        scheduler_period_secs: s.engine.scheduler_period.0,
        gc_sweep_period_secs: s.engine.gc_sweep_period.0,
        eviction_delay_secs: s.engine.eviction_delay.0,
        rebalance: rebalance_config(&s.rebalance),
        gc: GcConfig {
            ttl: s.ttl,
            policy: s.gc_policy.clone(),
        },
        ..EngineConfig::default()
    };
    Ok(CompiledScenario { setup, events, config })
}

/// Parses, validates and compiles scenario text.
pub fn load(text: &str) -> Result<CompiledScenario, Vec<Diagnostic>> {
    compile(&parse_scenario(text).map_err(|d| vec![d])?)
}
