//! Configuration, sweep orchestration, persistence, and reporting: the
//! executable surface of the laboratory.

pub mod config;
pub mod report;
pub mod snapshot;
pub mod sweep;

pub use config::{parse_config, ExperimentConfig, MetricKind, TheoremMode};
pub use report::{report, SweepSummary};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use sweep::{
    offline_metrics, run_pde1d, run_simulate, run_sweep, SweepCell, SweepOutput,
};
