//! Point-queue corridor simulator used as ground truth.
//!
//! Vehicles are generated at the external detector points, travel links at
//! a common free-flow speed and stack vertically at stoplines. A lane group
//! discharges at `lanes / saturation_headway` during its green, after the
//! startup lost time. There is no spillback between links.

mod config;
mod conservation;
mod events;
mod generate;
mod sampling;
mod sim;

pub use config::{ArrivalMode, SimConfig};
pub use conservation::{verify_conservation, Balance, ConservationReport};
pub use events::{write_event_log_csv, Event, EventKind, StoplineVisit, VehicleRecord};
pub use generate::{
    build_record, config_digest, generate_dataset, generate_records, manifest_path, scenario_seed, subgroup_counts,
    subgroup_key, DatasetManifest,
};
pub use sampling::{sample_scenario, Range, SamplingRanges};
pub use sim::{simulate_scenario, Simulation};
