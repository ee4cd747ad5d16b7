//! Experiment harness around `ufl-core`.
//!
//! Everything that needs the standard library lives here: IDX dataset files,
//! TOML configs with dotted overrides, named presets, the metrics CSV and run
//! manifests. The `ufl-sim` binary is a thin command line over [`runner`].

pub mod dump;
pub mod error;
pub mod idx;
pub mod manifest;
pub mod metrics;
pub mod presets;
pub mod runner;
pub mod settings;

pub use error::{Result, SimError};
