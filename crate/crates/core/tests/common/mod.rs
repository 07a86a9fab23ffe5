//! Seeded instance generators and independent reference implementations
//! shared by the property tests and the acceptance suite.
#![allow(dead_code)]

pub mod checks;
pub mod gen;
pub mod oracle;

use std::path::PathBuf;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn scenario_text(name: &str) -> String {
    std::fs::read_to_string(scenario_path(name)).expect("golden scenario present")
}
