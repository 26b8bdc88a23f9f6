//! Parking-road-parking driving scenario for adaptive patched grid maps:
//! a synthetic world, simulated lidars and camera, per-cycle fusion under
//! mode-dependent requirements, metrics and raster export.

pub mod config;
pub mod demo;
pub mod metrics;
pub mod raster;
pub mod scenario;
pub mod sim;
pub mod world;

pub use config::{ConfigError, ModeKey, ScenarioConfig, DEFAULT_CONFIG};
pub use metrics::{write_metrics, MetricsRecord, RunSummary};
pub use raster::{export_raster, Region};
pub use scenario::{run_scenario, CycleView, ScenarioError, ScenarioOutput};
pub use world::World;
