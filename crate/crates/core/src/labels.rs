//! Label maps and equality selectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Key/value labels attached to nodes, services and images.
pub type LabelMap = BTreeMap<String, String>;

/// Services carrying this label key are never picked for rebalancing.
pub const NO_RESCHEDULE: &str = "no-reschedule";

/// Required label pairs plus presence-only flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelSelector {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub match_labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
}

impl LabelSelector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.match_labels.insert(key.into(), value.into());
        self
    }

    pub fn with_flag(mut self, key: impl Into<String>) -> Self {
        self.flags.insert(key.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.match_labels.is_empty() && self.flags.is_empty()
    }

    pub fn matches(&self, labels: &LabelMap) -> bool {
        match_constraints(labels, self)
    }
}

/// True iff every selector pair is present in `labels` and every flag key
/// exists.
pub fn match_constraints(labels: &LabelMap, selector: &LabelSelector) -> bool {
    selector.match_labels.iter().all(|(k, v)| labels.get(k) == Some(v))
        && selector.flags.iter().all(|k| labels.contains_key(k))
}

pub fn has_no_reschedule(labels: &LabelMap) -> bool {
    labels
        .get(NO_RESCHEDULE)
        .is_some_and(|v| !v.eq_ignore_ascii_case("false"))
}
