//! Command-line tool and submission service around `pairbench-core`.

pub mod bench;
pub mod cli;
pub mod error;
pub mod service;
pub mod store;

pub use error::{HarnessError, Result};

/// Canonical report serialization shared by the CLI and the service, so
/// both produce byte-identical files.
pub fn report_json(report: &pairbench_core::metrics::MetricReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}
