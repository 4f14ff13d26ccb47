//! Configuration files, diagnostics CSV and binary snapshots.

pub mod config;
pub mod csv;
pub mod snapshot;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use csv::{parse_diagnostics_csv, write_diagnostics_csv, DiagnosticRow};
pub use snapshot::{read_snapshot, write_snapshot};
