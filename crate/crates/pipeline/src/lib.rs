//! Offline grouping pipeline, controller library and online selection.

pub mod cache;
pub mod config;
pub mod error;
pub mod library;
pub mod offline;
mod session;
pub mod sweep;

pub use config::{PipelineConfig, SynthesisConfig};
pub use error::{PipelineError, Result};
pub use library::{select_controller, ControllerLibrary, UnhandledContingency};
pub use offline::{run_cluster, run_distances, run_enumerate, run_offline, OfflineRun};
pub use sweep::{run_sweep, run_sweep_with, SweepOutcome};
