//! Batch front end for the staggered-grid transport sweeps: versioned JSON
//! configs, the scenario catalogue, suite orchestration with diagnostics,
//! and the hashed report bundle.

pub mod check;
pub mod config;
pub mod report;
pub mod scenario;
pub mod suite;

pub use config::{ScenarioKind, SuiteConfig};
pub use scenario::{build_scenario, ScenarioInstance};
pub use suite::{run_scale, run_suite, SuiteOutcome};
