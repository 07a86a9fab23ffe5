//! Run metrics, computed purely from an event log.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterState;
use crate::error::ClusterError;
use crate::journal::{Journal, LogRecord, Mutation, ReplayError};
use crate::rebalancer::imbalance_score;
use crate::SimTime;

/// Utilization of one node at the end of a timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: SimTime,
    pub utilization: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub records: usize,
    /// Up-node utilization after each timestamp that appears in the log.
    pub utilization: BTreeMap<String, Vec<Sample>>,
    pub evictions: BTreeMap<String, u64>,
    pub migrations: u64,
    pub migration_fallbacks: u64,
    pub gc_deletions: BTreeMap<String, u64>,
    pub progress_lost_total: u64,
    /// Seconds from each enqueue to the placement that followed it.
    pub queue_latency: BTreeMap<String, Vec<SimTime>>,
    pub rejected: u64,
    pub final_imbalance: Option<f64>,
    pub final_placement: BTreeMap<String, Vec<String>>,
    /// Queue contents at the end, in dequeue order.
    pub pending: Vec<String>,
}

impl MetricsReport {
    pub fn eviction_total(&self) -> u64 {
        self.evictions.values().sum()
    }

    pub fn gc_total(&self) -> u64 {
        self.gc_deletions.values().sum()
    }
}

fn sample(journal: &Journal, time: SimTime, out: &mut BTreeMap<String, Vec<Sample>>) {
    for node in journal.state.up_nodes() {
        if let Ok(u) = crate::cluster::utilization(node) {
            out.entry(node.id.clone()).or_default().push(Sample {
                time,
                utilization: u.to_f64(),
            });
        }
    }
}

/// Folds a log into a report. The log must replay from an empty cluster.
pub fn metrics_summary(log: &[LogRecord]) -> Result<MetricsReport, ReplayError> {
    let mut report = MetricsReport {
        records: log.len(),
        ..Default::default()
    };
    let mut open_enqueue: BTreeMap<&str, SimTime> = BTreeMap::new();
    let mut journal = Journal::default();
    for (index, rec) in log.iter().enumerate() {
        if index > 0 && rec.time != log[index - 1].time {
            sample(&journal, log[index - 1].time, &mut report.utilization);
        }
        replay_onto(&mut journal, index, rec)?;
        match &rec.mutation {
            Mutation::Evicted { cause, .. } => {
                *report.evictions.entry(cause.as_str().to_string()).or_default() += 1;
                report.progress_lost_total += 1;
            }
            Mutation::MigrationStarted { .. } => {
                report.migrations += 1;
                report.progress_lost_total += 1;
            }
            Mutation::MigrationFallback { .. } => report.migration_fallbacks += 1,
            Mutation::Deleted { category, .. } | Mutation::ImageDeleted { category, .. } => {
                *report.gc_deletions.entry(category.as_str().to_string()).or_default() += 1;
            }
            Mutation::Enqueued { service, .. } => {
                open_enqueue.insert(service, rec.time);
            }
            Mutation::Placed { service, .. } => {
                if let Some(t) = open_enqueue.remove(service.as_str()) {
                    report
                        .queue_latency
                        .entry(service.clone())
                        .or_default()
                        .push(rec.time - t);
                }
            }
            Mutation::Nominated { .. } => {}
            Mutation::Finished { service, .. }
            | Mutation::Dropped { service }
            | Mutation::Delegated { service, .. }
            | Mutation::DeletionStarted { object: service, .. } => {
                open_enqueue.remove(service.as_str());
            }
            Mutation::Rejected { .. } => report.rejected += 1,
            _ => {}
        }
    }
    if let Some(last) = log.last() {
        sample(&journal, last.time, &mut report.utilization);
    }
    finish(&journal.state, &mut report);
    report.pending = journal.queue.iter().map(|e| e.service).collect();
    Ok(report)
}

fn replay_onto(journal: &mut Journal, index: usize, rec: &LogRecord) -> Result<(), ReplayError> {
    if rec.time < journal.now() {
        return Err(ReplayError {
            index,
            error: ClusterError::ClockWentBackwards {
                now: rec.time,
                clock: journal.now(),
            },
        });
    }
    journal.set_now(rec.time);
    journal
        .emit(rec.mutation.clone())
        .map_err(|error| ReplayError { index, error })
}

fn finish(state: &ClusterState, report: &mut MetricsReport) {
    report.final_imbalance = imbalance_score(state).ok().map(|s| s.to_f64());
    report.final_placement = state
        .nodes
        .values()
        .map(|n| (n.id.clone(), n.placed.iter().cloned().collect()))
        .collect();
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let counts = |m: &BTreeMap<String, u64>| {
            if m.is_empty() {
                "none".to_string()
            } else {
                m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
            }
        };
        writeln!(f, "records             {}", self.records)?;
        writeln!(f, "evictions           {}", counts(&self.evictions))?;
        writeln!(f, "migrations          {}", self.migrations)?;
        writeln!(f, "migration fallbacks {}", self.migration_fallbacks)?;
        writeln!(f, "gc deletions        {}", counts(&self.gc_deletions))?;
        writeln!(f, "progress lost       {}", self.progress_lost_total)?;
        writeln!(f, "rejected            {}", self.rejected)?;
        match self.final_imbalance {
            Some(x) => writeln!(f, "final imbalance     {x:.4}")?,
            None => writeln!(f, "final imbalance     n/a")?,
        }
        writeln!(f, "placement")?;
        for (node, services) in &self.final_placement {
            writeln!(f, "  {node:<18}{}", services.join(","))?;
        }
        writeln!(
            f,
            "pending             {}",
            if self.pending.is_empty() {
                "-".to_string()
            } else {
                self.pending.join(",")
            }
        )?;
        if !self.queue_latency.is_empty() {
            writeln!(f, "queue latency (s)")?;
            for (svc, lat) in &self.queue_latency {
                let lat: Vec<String> = lat.iter().map(u64::to_string).collect();
                writeln!(f, "  {svc:<18}{}", lat.join(","))?;
            }
        }
        Ok(())
    }
}
