//! Fixture builder for assembling cluster states through the journal, so
//! every built state satisfies the same invariants the engine maintains.
//!
//! Builder methods panic on input the journal rejects.

use crate::cluster::{ClusterState, ImageSpec, NodeSpec, PriorityClass, ServiceSpec};
use crate::journal::{Journal, Mutation};
use crate::labels::LabelMap;
use crate::resources::ResourceVector;
use crate::SimTime;

#[derive(Debug, Default)]
pub struct ClusterBuilder {
    journal: Journal,
}

impl ClusterBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(mut self, time: SimTime) -> Self {
        self.journal.set_now(time);
        self
    }

    fn emit(mut self, m: Mutation) -> Self {
        let what = format!("{m:?}");
        self.journal.emit(m).unwrap_or_else(|e| panic!("builder: {what}: {e}"));
        self
    }

    pub fn node(self, id: &str, capacity: ResourceVector) -> Self {
        self.node_with_labels(id, capacity, LabelMap::new())
    }

    pub fn node_with_labels(self, id: &str, capacity: ResourceVector, labels: LabelMap) -> Self {
        self.emit(Mutation::NodeRegistered {
            node: NodeSpec {
                id: id.to_string(),
                capacity,
                labels,
            },
        })
    }

    pub fn class(self, name: &str, value: i32) -> Self {
        self.emit(Mutation::PriorityClassRegistered {
            class: PriorityClass {
                name: name.to_string(),
                value,
                global_default: false,
                description: String::new(),
            },
        })
    }

    pub fn default_class(self, name: &str, value: i32) -> Self {
        self.emit(Mutation::PriorityClassRegistered {
            class: PriorityClass {
                name: name.to_string(),
                value,
                global_default: true,
                description: String::new(),
            },
        })
    }

    pub fn image(self, id: &str, size_bytes: u64, last_used: SimTime, tags: LabelMap) -> Self {
        self.emit(Mutation::ImageRegistered {
            image: ImageSpec {
                id: id.to_string(),
                size_bytes,
                last_used,
                tags,
            },
        })
    }

    /// Submits a service and leaves it Pending in the queue.
    pub fn pending(self, spec: ServiceSpec) -> Self {
        let id = spec.id.clone();
        let mut this = self.emit(Mutation::Submitted { spec });
        this.journal
            .enqueue(&id)
            .unwrap_or_else(|e| panic!("builder: enqueue {id}: {e}"));
        this
    }

    /// Submits a service and binds it straight to `node`.
    pub fn running(self, spec: ServiceSpec, node: &str) -> Self {
        let id = spec.id.clone();
        self.emit(Mutation::Submitted { spec }).emit(Mutation::Placed {
            service: id,
            node: node.to_string(),
        })
    }

    pub fn mutate(self, m: Mutation) -> Self {
        self.emit(m)
    }

    pub fn journal(self) -> Journal {
        self.journal
    }

    pub fn state(self) -> ClusterState {
        self.journal.state
    }
}

/// Shorthand for a service with a priority class and request.
pub fn svc(id: &str, request: ResourceVector, class: Option<&str>) -> ServiceSpec {
    ServiceSpec {
        priority_class_name: class.map(str::to_string),
        ..ServiceSpec::new(id, request)
    }
}
