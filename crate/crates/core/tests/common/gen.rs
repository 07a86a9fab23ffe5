use std::collections::{BTreeMap, BTreeSet};

use orchsim_core::builder::{svc, ClusterBuilder};
use orchsim_core::cluster::ServiceSpec;
use orchsim_core::engine::{EngineConfig, EventKind, Setup, SimEvent};
use orchsim_core::labels::NO_RESCHEDULE;
use orchsim_core::rebalancer::{ManualMove, RebalanceConfig, Strategy, Window};
use orchsim_core::{
    ClusterState, DeletionMode, ImageRecord, LabelMap, LabelSelector, Mutation, NodeSpec, Phase, PriorityClass,
    ResourceVector,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [(&str, i32); 4] = [("p0", 0), ("p1", 1000), ("p2", 2000), ("p3", 3000)];

fn with_classes(mut b: ClusterBuilder) -> ClusterBuilder {
    for (name, value) in CLASSES {
        b = b.class(name, value);
    }
    b
}

fn request(rng: &mut ChaCha8Rng, max_cpu: u64, max_mem: u64) -> ResourceVector {
    ResourceVector::new(
        rng.random_range(1..=max_cpu) * 100,
        rng.random_range(0..=max_mem) * 100,
        0,
    )
}

/// Tries nodes in random order and returns the first the request fits on.
fn fitting_node(
    rng: &mut ChaCha8Rng,
    state: &ClusterState,
    req: &ResourceVector,
    labels: &LabelSelector,
) -> Option<String> {
    let mut ids: Vec<&String> = state.nodes.keys().collect();
    ids.shuffle(rng);
    ids.into_iter()
        .find(|id| {
            let n = &state.nodes[*id];
            n.is_up() && n.free().covers(req) && labels.matches(&n.labels)
        })
        .cloned()
}

#[derive(Debug, Clone)]
pub struct PreemptionCase {
    pub state: ClusterState,
    pub incoming: ServiceSpec,
}

/// Up to 3 nodes and 6 running services at priorities {0..3}·1000.
pub fn preemption_case(rng: &mut ChaCha8Rng) -> PreemptionCase {
    let mut b = with_classes(ClusterBuilder::new());
    let nodes = rng.random_range(1..=3);
    for n in 0..nodes {
        let cap = ResourceVector::new(rng.random_range(4..=10) * 100, rng.random_range(2..=8) * 100, 0);
        b = b.node(&format!("n{n}"), cap);
    }
    let mut state = b.state();
    let mut j = orchsim_core::Journal::from_state(state.clone());
    let services = rng.random_range(0..=6);
    for s in 0..services {
        let req = request(rng, 5, 4);
        let class = CLASSES[rng.random_range(0..4)].0;
        let Some(node) = fitting_node(rng, &j.state, &req, &LabelSelector::new()) else {
            continue;
        };
        let spec = svc(&format!("s{s}"), req, Some(class));
        j.emit(Mutation::Submitted { spec }).unwrap();
        j.emit(Mutation::Placed {
            service: format!("s{s}"),
            node,
        })
        .unwrap();
    }
    state = j.state;
    let class = CLASSES[rng.random_range(1..4)].0;
    let incoming = svc("incoming", request(rng, 10, 8), Some(class));
    PreemptionCase { state, incoming }
}

/// Up to 3 nodes (some possibly Down) and 6 running services, some pinned
/// with `no-reschedule` and some constrained to a zone.
pub fn rebalance_case(rng: &mut ChaCha8Rng) -> ClusterState {
    let mut j = ClusterBuilder::new().journal();
    let nodes = rng.random_range(1..=3);
    for n in 0..nodes {
        let mut labels = LabelMap::new();
        labels.insert("zone".into(), if rng.random_bool(0.5) { "a" } else { "b" }.into());
        let cap = ResourceVector::new(rng.random_range(4..=10) * 100, rng.random_range(2..=8) * 100, 0);
        j.emit(Mutation::NodeRegistered {
            node: NodeSpec {
                id: format!("n{n}"),
                capacity: cap,
                labels,
            },
        })
        .unwrap();
    }
    if nodes > 1 && rng.random_bool(0.15) {
        j.emit(Mutation::NodeDown { node: "n0".into() }).unwrap();
    }
    let services = rng.random_range(0..=6);
    for s in 0..services {
        let req = request(rng, 4, 3);
        let mut spec = svc(&format!("s{s}"), req, None);
        if rng.random_bool(0.15) {
            spec.labels.insert(NO_RESCHEDULE.into(), "true".into());
        }
        if rng.random_bool(0.2) {
            spec.constraints = LabelSelector::new().with("zone", if rng.random_bool(0.5) { "a" } else { "b" });
        }
        let Some(node) = fitting_node(rng, &j.state, &req, &spec.constraints) else {
            continue;
        };
        let id = spec.id.clone();
        j.emit(Mutation::Submitted { spec }).unwrap();
        j.emit(Mutation::Placed { service: id, node }).unwrap();
    }
    j.state
}

/// A random image store; some images are referenced by pending services.
pub fn image_store(rng: &mut ChaCha8Rng, now: u64) -> BTreeMap<String, ImageRecord> {
    let kinds = ["source.local", "exec.cachemount", "source.git.checkout", "regular"];
    let count = rng.random_range(0..=12);
    (0..count)
        .map(|i| {
            let mut tags = LabelMap::new();
            tags.insert("type".into(), kinds[rng.random_range(0..kinds.len())].into());
            if rng.random_bool(0.15) {
                tags.insert("internal".into(), "true".into());
            }
            let mut in_use_by = BTreeSet::new();
            if rng.random_bool(0.2) {
                in_use_by.insert(format!("user{i}"));
            }
            let rec = ImageRecord {
                id: format!("img{i:02}"),
                size_bytes: rng.random_range(1..=60) * 100_000_000,
                last_used: rng.random_range(0..=now),
                tags,
                in_use_by,
            };
            (rec.id.clone(), rec)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GcWorld {
    pub journal: orchsim_core::Journal,
    pub ids: Vec<String>,
}

/// Services forming a random ownership DAG (owners always have smaller
/// indices), some finished, some with finalizers or images.
pub fn gc_world(rng: &mut ChaCha8Rng) -> GcWorld {
    let mut j = ClusterBuilder::new()
        .node("n", ResourceVector::new(100_000, 100_000, 0))
        .image("img-a", 100, 0, LabelMap::new())
        .image("img-b", 200, 0, LabelMap::new())
        .journal();
    let count = rng.random_range(1..=9);
    let mut ids = Vec::new();
    for i in 0..count {
        let id = format!("o{i}");
        let mut spec = svc(&id, ResourceVector::new(100, 100, 0), None);
        if i > 0 {
            let owners = rng.random_range(0..=2.min(i));
            let mut pool: Vec<usize> = (0..i).collect();
            pool.shuffle(rng);
            spec.owner_refs = pool[..owners].iter().map(|o| format!("o{o}")).collect();
            spec.owner_refs.sort();
        }
        for f in 0..rng.random_range(0..=2) {
            if rng.random_bool(0.4) {
                spec.finalizers.push(format!("f{f}"));
            }
        }
        if rng.random_bool(0.3) {
            spec.kind = orchsim_core::ObjectKind::Job;
        }
        if rng.random_bool(0.3) {
            spec.image = Some(if rng.random_bool(0.5) { "img-a" } else { "img-b" }.into());
        }
        j.emit(Mutation::Submitted { spec }).unwrap();
        match rng.random_range(0..3) {
            0 => {}
            1 => j
                .emit(Mutation::Placed {
                    service: id.clone(),
                    node: "n".into(),
                })
                .unwrap(),
            _ => j
                .emit(Mutation::Finished {
                    service: id.clone(),
                    phase: if rng.random_bool(0.5) {
                        Phase::Completed
                    } else {
                        Phase::Terminated
                    },
                })
                .unwrap(),
        }
        ids.push(id);
    }
    GcWorld { journal: j, ids }
}

pub fn random_mode(rng: &mut ChaCha8Rng) -> DeletionMode {
    if rng.random_bool(0.5) {
        DeletionMode::Foreground
    } else {
        DeletionMode::Background
    }
}

#[derive(Debug, Clone)]
pub struct EngineCase {
    pub setup: Setup,
    pub events: Vec<SimEvent>,
    pub config: EngineConfig,
}

/// A random event script over a small cluster exercising preemption,
/// outages, completions, deletions, rebalancing windows and GC.
pub fn engine_case(rng: &mut ChaCha8Rng) -> EngineCase {
    let nodes = rng.random_range(1..=3);
    let setup = Setup {
        nodes: (0..nodes)
            .map(|n| NodeSpec {
                id: format!("n{n}"),
                capacity: ResourceVector::new(rng.random_range(4..=10) * 100, rng.random_range(4..=10) * 100, 0),
                labels: LabelMap::new(),
            })
            .collect(),
        priority_classes: CLASSES
            .iter()
            .map(|(n, v)| PriorityClass {
                name: n.to_string(),
                value: *v,
                global_default: false,
                description: String::new(),
            })
            .collect(),
        images: Vec::new(),
    };
    let mut events = Vec::new();
    let mut time = 0;
    let mut submitted: Vec<String> = Vec::new();
    let mut down: BTreeSet<String> = BTreeSet::new();
    for _ in 0..rng.random_range(1..=20) {
        time += rng.random_range(0..=40);
        let roll = rng.random_range(0..100);
        let kind = if roll < 45 || submitted.is_empty() {
            let id = format!("s{}", submitted.len());
            let mut spec = svc(&id, request(rng, 5, 5), Some(CLASSES[rng.random_range(0..4)].0));
            if rng.random_bool(0.1) {
                spec.labels.insert(NO_RESCHEDULE.into(), "true".into());
            }
            if rng.random_bool(0.15) && !submitted.is_empty() {
                spec.owner_refs = vec![submitted[rng.random_range(0..submitted.len())].clone()];
            }
            spec.eviction_policy = match rng.random_range(0..10) {
                0 => orchsim_core::EvictionPolicy::Drop,
                1 if !submitted.is_empty() => {
                    spec.delegate_to = Some(submitted[rng.random_range(0..submitted.len())].clone());
                    orchsim_core::EvictionPolicy::Delegate
                }
                _ => orchsim_core::EvictionPolicy::Requeue,
            };
            submitted.push(id);
            EventKind::SubmitService {
                spec,
                initial_node: None,
            }
        } else if roll < 58 {
            let node = format!("n{}", rng.random_range(0..nodes));
            if down.remove(&node) {
                EventKind::NodeUp { node }
            } else {
                down.insert(node.clone());
                EventKind::NodeDown { node }
            }
        } else if roll < 70 {
            EventKind::CompleteService {
                service: submitted[rng.random_range(0..submitted.len())].clone(),
                phase: Phase::Completed,
            }
        } else if roll < 78 {
            EventKind::DeleteObject {
                object: submitted[rng.random_range(0..submitted.len())].clone(),
                mode: random_mode(rng),
            }
        } else if roll < 84 {
            EventKind::ManualRebalance {
                moves: vec![ManualMove {
                    service: submitted[rng.random_range(0..submitted.len())].clone(),
                    target: format!("n{}", rng.random_range(0..nodes)),
                }],
            }
        } else if roll < 88 {
            EventKind::UpdatePriorityClass {
                class: PriorityClass {
                    name: CLASSES[rng.random_range(0..4)].0.into(),
                    value: rng.random_range(0..4) * 1000 + 500,
                    global_default: false,
                    description: String::new(),
                },
            }
        } else if roll < 91 {
            EventKind::FullClusterRestart
        } else {
            EventKind::Tick
        };
        events.push(SimEvent { time, kind });
    }
    let mut windows = Vec::new();
    let mut start = rng.random_range(0..=60);
    for _ in 0..rng.random_range(0..=3) {
        let end = start + rng.random_range(1..=80);
        windows.push(Window { start, end });
        start = end + rng.random_range(1..=60);
    }
    let config = EngineConfig {
        scheduler_period_secs: if rng.random_bool(0.3) {
            rng.random_range(1..=15)
        } else {
            0
        },
        gc_sweep_period_secs: rng.random_range(0..=30),
        eviction_delay_secs: rng.random_range(0..=2),
        rebalance: RebalanceConfig {
            threshold: rng.random_range(0..=5) as f64 / 10.0,
            max_migrations_per_step: rng.random_range(1..=3),
            strategy: Strategy::Automatic,
            windows,
        },
        gc: orchsim_core::GcConfig {
            ttl: orchsim_core::TtlConfig {
                terminated_service_retention: Some(orchsim_core::units::Seconds(rng.random_range(0..=100))),
                job_retention: None,
                unused_image_retention: None,
            },
            policy: Vec::new(),
        },
        seed: rng.random(),
        check_invariants: true,
    };
    EngineCase { setup, events, config }
}
