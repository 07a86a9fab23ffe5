//! Seeded cluster generators shared by the benchmarks.

use std::collections::BTreeSet;

use orchsim_core::builder::{svc, ClusterBuilder};
use orchsim_core::{ClusterState, ImageRecord, LabelMap, ResourceVector, ServiceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [(&str, i32); 4] = [("p0", 0), ("p1", 1000), ("p2", 2000), ("p3", 3000)];

/// `nodes` full-ish nodes carrying `per_node` running services each, with
/// random priorities, plus a high-priority pending service that does not
/// fit anywhere.
pub fn crowded_cluster(seed: u64, nodes: usize, per_node: usize) -> (ClusterState, ServiceSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ClusterBuilder::new();
    for (name, value) in CLASSES {
        b = b.class(name, value);
    }
    let slot = 10_000 / per_node as u64;
    for n in 0..nodes {
        let id = format!("n{n:03}");
        b = b.node(&id, ResourceVector::new(10_000, 1 << 34, 0));
        for s in 0..per_node {
            let class = CLASSES[rng.random_range(0..3)].0;
            let cpu = rng.random_range(slot / 2..=slot);
            b = b.running(
                svc(
                    &format!("s{n:03}-{s:02}"),
                    ResourceVector::new(cpu, 1 << 28, 0),
                    Some(class),
                ),
                &id,
            );
        }
    }
    let incoming = svc("incoming", ResourceVector::new(slot * 3, 1 << 28, 0), Some("p3"));
    (b.state(), incoming)
}

/// A skewed cluster for rebalancing: services are packed onto the first
/// half of the nodes.
pub fn skewed_cluster(seed: u64, nodes: usize, services: usize) -> ClusterState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ClusterBuilder::new();
    for n in 0..nodes {
        b = b.node(&format!("n{n:03}"), ResourceVector::new(100_000, 1 << 36, 0));
    }
    let loaded = (nodes / 2).max(1);
    for s in 0..services {
        let cpu = rng.random_range(500..3000);
        let node = format!("n{:03}", s % loaded);
        b = b.running(
            svc(&format!("s{s:04}"), ResourceVector::new(cpu, 1 << 26, 0), None),
            &node,
        );
    }
    b.state()
}

pub fn image_store(seed: u64, count: usize) -> std::collections::BTreeMap<String, ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = ["source.local", "exec.cachemount", "source.git.checkout", "regular"];
    (0..count)
        .map(|i| {
            let mut tags = LabelMap::new();
            tags.insert("type".into(), kinds[rng.random_range(0..kinds.len())].into());
            let rec = ImageRecord {
                id: format!("img{i:05}"),
                size_bytes: rng.random_range(10_000_000..500_000_000),
                last_used: rng.random_range(0..200 * 86_400),
                tags,
                in_use_by: BTreeSet::new(),
            };
            (rec.id.clone(), rec)
        })
        .collect()
}
