use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::ClusterError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub service: String,
    pub priority: i32,
    pub seq: u64,
}

/// Pending services ordered by descending priority, FIFO within a priority.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchedulingQueue {
    order: BTreeSet<(Reverse<i32>, u64, String)>,
    index: BTreeMap<String, (i32, u64)>,
    next_seq: u64,
}

impl SchedulingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, service: &str, priority: i32) -> Result<u64, ClusterError> {
        if self.index.contains_key(service) {
            return Err(ClusterError::AlreadyQueued(service.to_string()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.order.insert((Reverse(priority), seq, service.to_string()));
        self.index.insert(service.to_string(), (priority, seq));
        Ok(seq)
    }

    pub fn dequeue(&mut self) -> Option<QueueEntry> {
        let (Reverse(priority), seq, service) = self.order.pop_first()?;
        self.index.remove(&service);
        Some(QueueEntry { service, priority, seq })
    }

    pub fn peek(&self) -> Option<QueueEntry> {
        self.order.first().map(|(Reverse(priority), seq, service)| QueueEntry {
            service: service.clone(),
            priority: *priority,
            seq: *seq,
        })
    }

    pub fn remove(&mut self, service: &str) -> Option<QueueEntry> {
        let (priority, seq) = self.index.remove(service)?;
        self.order.remove(&(Reverse(priority), seq, service.to_string()));
        Some(QueueEntry {
            service: service.to_string(),
            priority,
            seq,
        })
    }

    /// Changes an entry's priority, keeping its original sequence number.
    pub fn reprioritize(&mut self, service: &str, priority: i32) -> bool {
        let Some(entry) = self.index.get_mut(service) else {
            return false;
        };
        let (old, seq) = *entry;
        entry.0 = priority;
        self.order.remove(&(Reverse(old), seq, service.to_string()));
        self.order.insert((Reverse(priority), seq, service.to_string()));
        true
    }

    pub fn contains(&self, service: &str) -> bool {
        self.index.contains_key(service)
    }

    pub fn priority_of(&self, service: &str) -> Option<i32> {
        self.index.get(service).map(|(p, _)| *p)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Entries in dequeue order.
    pub fn iter(&self) -> impl Iterator<Item = QueueEntry> + '_ {
        self.order.iter().map(|(Reverse(priority), seq, service)| QueueEntry {
            service: service.clone(),
            priority: *priority,
            seq: *seq,
        })
    }
}
