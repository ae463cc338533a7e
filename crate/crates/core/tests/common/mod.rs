//! Helpers shared by the integration test targets.

#![allow(dead_code)]

pub mod oracle;
pub mod wire;

use std::path::PathBuf;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Outcome of one named check; failures carry a human-readable reason.
#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub outcome: Result<(), String>,
}

impl Check {
    pub fn new(name: impl Into<String>, outcome: Result<(), String>) -> Self {
        Check { name: name.into(), outcome }
    }
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("{}: {e}", c.name)))
        .collect();
    assert!(!checks.is_empty(), "no checks ran");
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}
