//! Attack-simulation harness for the resilient state estimation toolkit:
//! scenario configuration, a deterministic synthetic world, the
//! Monte-Carlo runner, and report emission.

pub mod report;
pub mod runner;
pub mod scenario;
pub mod synth;

pub use report::{emit_report, summarize, ReportFormat, SuccessMetrics};
pub use runner::{run_monte_carlo, TrialResult};
pub use scenario::{load_grid, EstimatorKind, ScenarioConfig};
