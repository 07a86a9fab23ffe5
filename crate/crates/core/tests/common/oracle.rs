//! Brute-force and log-reading reference implementations. None of these
//! call into the planners they check.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use orchsim_core::{ClusterState, ImageRecord, ResourceVector, ServiceSpec};
use serde_json::Value;

type Q = Ratio<u128>;

fn priority_of(state: &ClusterState, spec: &ServiceSpec) -> i32 {
    match &spec.priority_class_name {
        Some(name) => state.priority_classes[name].value,
        None => state
            .priority_classes
            .values()
            .find(|c| c.global_default)
            .map_or(0, |c| c.value),
    }
}

fn covers(have: [u64; 3], need: [u64; 3]) -> bool {
    (0..3).all(|i| have[i] >= need[i])
}

fn comps(r: &ResourceVector) -> [u64; 3] {
    [r.cpu_millis, r.memory_bytes, r.disk_bytes]
}

fn constraints_ok(node_labels: &BTreeMap<String, String>, spec: &ServiceSpec) -> bool {
    spec.constraints
        .match_labels
        .iter()
        .all(|(k, v)| node_labels.get(k) == Some(v))
        && spec.constraints.flags.iter().all(|k| node_labels.contains_key(k))
}

/// Minimal (max victim priority, victim count, node) over every node and
/// every subset of its strictly-lower-priority services that makes room.
/// `None` when no node needs and allows preemption.
pub fn best_preemption_key(state: &ClusterState, incoming: &ServiceSpec) -> Option<(i32, usize, String)> {
    let p_in = priority_of(state, incoming);
    let need = comps(&incoming.request);
    let mut best: Option<(i32, usize, String)> = None;
    for node in state.nodes.values() {
        if !node.is_up() || !constraints_ok(&node.labels, incoming) {
            continue;
        }
        let cap = comps(&node.capacity);
        let alloc = comps(&node.allocated);
        let free = [0, 1, 2].map(|i| cap[i].saturating_sub(alloc[i]));
        if covers(free, need) {
            continue;
        }
        let victims: Vec<([u64; 3], i32)> = node
            .placed
            .iter()
            .map(|id| &state.services[id].spec)
            .map(|s| (comps(&s.request), priority_of(state, s)))
            .filter(|(_, p)| *p < p_in)
            .collect();
        for mask in 1u32..(1 << victims.len()) {
            let mut have = free;
            let mut max_p = i32::MIN;
            let mut count = 0;
            for (i, (req, p)) in victims.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    (0..3).for_each(|d| have[d] += req[d]);
                    max_p = max_p.max(*p);
                    count += 1;
                }
            }
            if !covers(have, need) {
                continue;
            }
            let key = (max_p, count, node.id.clone());
            if best.as_ref().is_none_or(|b| key < *b) {
                best = Some(key);
            }
        }
    }
    best
}

/// Whether evicting `victims` from `node` makes room for `incoming`.
pub fn victims_make_room(state: &ClusterState, node: &str, victims: &[String], incoming: &ServiceSpec) -> bool {
    let n = &state.nodes[node];
    let cap = comps(&n.capacity);
    let alloc = comps(&n.allocated);
    let mut have = [0, 1, 2].map(|i| cap[i].saturating_sub(alloc[i]));
    for v in victims {
        if !n.placed.contains(v) {
            return false;
        }
        let r = comps(&state.services[v].spec.request);
        (0..3).for_each(|d| have[d] += r[d]);
    }
    covers(have, comps(&incoming.request))
}

fn share(alloc: [u64; 3], cap: [u64; 3]) -> Q {
    (0..3)
        .filter(|&d| cap[d] > 0)
        .map(|d| Q::new(alloc[d] as u128, cap[d] as u128))
        .max()
        .unwrap_or_else(|| Q::from_integer(0))
}

/// A detached copy of per-node load for the move oracle.
#[derive(Debug, Clone)]
pub struct Load {
    cap: BTreeMap<String, [u64; 3]>,
    alloc: BTreeMap<String, [u64; 3]>,
    labels: BTreeMap<String, BTreeMap<String, String>>,
    location: BTreeMap<String, String>,
    movable: BTreeMap<String, ServiceSpec>,
}

impl Load {
    pub fn of(state: &ClusterState) -> Self {
        let mut load = Load {
            cap: BTreeMap::new(),
            alloc: BTreeMap::new(),
            labels: BTreeMap::new(),
            location: BTreeMap::new(),
            movable: BTreeMap::new(),
        };
        for n in state.nodes.values().filter(|n| n.is_up()) {
            load.cap.insert(n.id.clone(), comps(&n.capacity));
            load.labels.insert(n.id.clone(), n.labels.clone());
            let mut a = n
                .reserved
                .values()
                .map(comps)
                .fold([0; 3], |x, y| [x[0] + y[0], x[1] + y[1], x[2] + y[2]]);
            for id in &n.placed {
                let r = comps(&state.services[id].spec.request);
                (0..3).for_each(|d| a[d] += r[d]);
                let spec = &state.services[id].spec;
                let pinned = spec
                    .labels
                    .get("no-reschedule")
                    .is_some_and(|v| v.to_ascii_lowercase() != "false");
                if !pinned {
                    load.location.insert(id.clone(), n.id.clone());
                    load.movable.insert(id.clone(), spec.clone());
                }
            }
            load.alloc.insert(n.id.clone(), a);
        }
        load
    }

    pub fn spread(&self) -> Option<Q> {
        let shares: Vec<Q> = self.alloc.iter().map(|(n, a)| share(*a, self.cap[n])).collect();
        Some(*shares.iter().max()? - *shares.iter().min()?)
    }

    fn moved(&self, service: &str, target: &str) -> Load {
        let mut next = self.clone();
        let req = comps(&self.movable[service].request);
        let source = next.location.insert(service.into(), target.into()).unwrap();
        let s = next.alloc.get_mut(&source).unwrap();
        (0..3).for_each(|d| s[d] -= req[d]);
        let t = next.alloc.get_mut(target).unwrap();
        (0..3).for_each(|d| t[d] += req[d]);
        next
    }

    /// Every legal move with the spread it would leave, in no order.
    pub fn legal_moves(&self) -> Vec<(Q, String, String)> {
        let mut out = Vec::new();
        for (service, source) in &self.location {
            let spec = &self.movable[service];
            let req = comps(&spec.request);
            for (target, cap) in &self.cap {
                if target == source || !constraints_ok(&self.labels[target], spec) {
                    continue;
                }
                let a = self.alloc[target];
                let free = [0, 1, 2].map(|d| cap[d] - a[d]);
                if !covers(free, req) {
                    continue;
                }
                let after = self.moved(service, target).spread().unwrap();
                out.push((after, service.clone(), target.clone()));
            }
        }
        out
    }

    /// The improving move with the least resulting spread, ties broken by
    /// service then target id.
    pub fn best_move(&self) -> Option<(Q, String, String)> {
        let current = self.spread()?;
        self.legal_moves()
            .into_iter()
            .filter(|(after, _, _)| *after < current)
            .min()
    }

    /// Up to `k` greedy moves and the spread they leave.
    pub fn plan(&self, k: usize) -> (Vec<(String, String)>, Option<Q>) {
        let mut load = self.clone();
        let mut moves = Vec::new();
        while moves.len() < k {
            let Some((_, s, t)) = load.best_move() else { break };
            load = load.moved(&s, &t);
            moves.push((s, t));
        }
        let after = (!moves.is_empty()).then(|| load.spread().unwrap());
        (moves, after)
    }
}

pub fn q_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// A pruning rule in the oracle's own representation; filters stay the raw
/// `key==value,...` text until evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefRule {
    pub all: bool,
    pub filter: String,
    pub keep_secs: Option<u64>,
    pub keep_bytes: Option<u64>,
}

impl RefRule {
    /// The rule with its filter clauses as an unordered set.
    pub fn normalized(&self) -> (bool, BTreeSet<(String, String)>, Option<u64>, Option<u64>) {
        let clauses = self
            .filter
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| {
                let (k, v) = c.split_once("==").expect("oracle filters are well formed");
                (k.trim().to_string(), v.trim().to_string())
            })
            .collect();
        (self.all, clauses, self.keep_secs, self.keep_bytes)
    }
}

fn filter_admits(filter: &str, tags: &BTreeMap<String, String>) -> bool {
    let mut by_key: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for clause in filter.split(',').filter(|c| !c.trim().is_empty()) {
        let (k, v) = clause.split_once("==").expect("oracle filters are well formed");
        by_key.entry(k.trim()).or_default().push(v.trim());
    }
    by_key
        .iter()
        .all(|(k, vs)| tags.get(*k).is_some_and(|t| vs.contains(&t.as_str())))
}

/// Reference pruning: returns (image, rule index) in deletion order.
pub fn prune(images: &BTreeMap<String, ImageRecord>, rules: &[RefRule], now: u64) -> Vec<(String, usize)> {
    let mut live: BTreeSet<String> = images.keys().cloned().collect();
    let mut out = Vec::new();
    for (i, rule) in rules.iter().enumerate() {
        let mut picks: Vec<&ImageRecord> = live
            .iter()
            .map(|id| &images[id])
            .filter(|img| img.in_use_by.is_empty())
            .filter(|img| rule.all || img.tags.get("internal").map(String::as_str) != Some("true"))
            .filter(|img| rule.all || filter_admits(&rule.filter, &img.tags))
            .filter(|img| rule.keep_secs.is_none_or(|k| now - img.last_used.min(now) >= k))
            .collect();
        picks.sort_by_key(|img| (img.last_used, img.id.clone()));
        for img in picks {
            let total: u64 = live.iter().map(|id| images[id].size_bytes).sum();
            if rule.keep_bytes.is_some_and(|k| total <= k) {
                break;
            }
            live.remove(&img.id);
            out.push((img.id.clone(), i));
        }
    }
    out
}

/// Counters recomputed by reading the structured log as plain JSON.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogFacts {
    pub records: usize,
    pub evictions: BTreeMap<String, u64>,
    pub migrations: u64,
    pub fallbacks: u64,
    pub deletions: BTreeMap<String, u64>,
    pub rejected: u64,
    pub progress_lost: u64,
    pub placement: BTreeMap<String, Vec<String>>,
    pub latency: BTreeMap<String, Vec<u64>>,
    pub final_imbalance: Option<f64>,
}

fn vec3(v: &Value) -> [u64; 3] {
    ["cpuMillis", "memoryBytes", "diskBytes"].map(|k| v.get(k).and_then(Value::as_u64).unwrap_or(0))
}

pub fn read_log(lines: &[String]) -> LogFacts {
    let mut f = LogFacts::default();
    let mut cap: BTreeMap<String, [u64; 3]> = BTreeMap::new();
    let mut up: BTreeMap<String, bool> = BTreeMap::new();
    let mut request: BTreeMap<String, [u64; 3]> = BTreeMap::new();
    let mut bound: BTreeMap<String, String> = BTreeMap::new();
    let mut held: BTreeMap<String, String> = BTreeMap::new();
    let mut waiting: BTreeMap<String, u64> = BTreeMap::new();
    for line in lines {
        let v: Value = serde_json::from_str(line).expect("log lines are JSON");
        f.records += 1;
        let time = v["time"].as_u64().unwrap();
        let p = &v["payload"];
        let s = |k: &str| p[k].as_str().unwrap_or_default().to_string();
        match v["kind"].as_str().unwrap() {
            "node-registered" => {
                let id = p["node"]["id"].as_str().unwrap().to_string();
                cap.insert(id.clone(), vec3(&p["node"]["capacity"]));
                up.insert(id, true);
            }
            "node-down" => {
                up.insert(s("node"), false);
            }
            "node-up" => {
                up.insert(s("node"), true);
            }
            "submitted" => {
                let id = p["spec"]["id"].as_str().unwrap().to_string();
                request.insert(id, vec3(&p["spec"]["request"]));
            }
            "enqueued" => {
                waiting.insert(s("service"), time);
            }
            "placed" => {
                held.remove(&s("service"));
                bound.insert(s("service"), s("node"));
                if let Some(t) = waiting.remove(&s("service")) {
                    f.latency.entry(s("service")).or_default().push(time - t);
                }
            }
            "nominated" => {
                held.insert(s("service"), s("node"));
            }
            "unreserved" => {
                held.remove(&s("service"));
            }
            "evicted" => {
                bound.remove(&s("service"));
                *f.evictions.entry(s("cause")).or_default() += 1;
                f.progress_lost += 1;
            }
            "migration-started" => {
                bound.remove(&s("service"));
                f.migrations += 1;
                f.progress_lost += 1;
            }
            "migration-fallback" => f.fallbacks += 1,
            "finished" | "dropped" | "delegated" => {
                bound.remove(&s("service"));
                held.remove(&s("service"));
                waiting.remove(&s("service"));
            }
            "deletion-started" => {
                bound.remove(&s("object"));
                held.remove(&s("object"));
                waiting.remove(&s("object"));
            }
            "deleted" | "image-deleted" => {
                *f.deletions.entry(s("category")).or_default() += 1;
            }
            "rejected" => f.rejected += 1,
            _ => {}
        }
    }
    for node in cap.keys() {
        f.placement.insert(node.clone(), Vec::new());
    }
    for (svc, node) in &bound {
        f.placement.get_mut(node).unwrap().push(svc.clone());
    }
    let mut shares = Vec::new();
    for (node, c) in &cap {
        if !up[node] {
            continue;
        }
        let mut a = [0u64; 3];
        for (svc, n) in bound.iter().chain(held.iter()) {
            if n == node {
                (0..3).for_each(|d| a[d] += request[svc][d]);
            }
        }
        shares.push(share(a, *c));
    }
    if let (Some(hi), Some(lo)) = (shares.iter().max(), shares.iter().min()) {
        f.final_imbalance = Some(q_to_f64(*hi - *lo));
    }
    f
}
