//! Corridor scenarios and their conversion to graph samples.

mod dataset;
mod intervals;
mod samples;
mod scenario;
mod subgroups;

pub use dataset::{read_dataset, write_dataset, ScenarioRecord};
pub use intervals::{aggregate_to_intervals, Aggregation};
pub use samples::{
    build_dynamic_graph, build_dynamic_inputs, build_static_graph, mask_positions, DetectorRecord, DynamicGraphSample,
    DynamicInputs, OracleOutputs, StaticGraphSample, TargetBundle, MASK_SENTINEL, NODE_TIME_FEATURES,
    SIGNAL_FEATURES, STATIC_EDGE_FEATURES, EDGE_LENGTH, EDGE_SPEED, EDGE_SPEED_FACTOR,
};
pub use scenario::{
    external_approaches, Approach, CorridorGeometry, DemandSource, DrivingBehavior, GreenWindow, IntersectionTiming,
    Phase, PhaseGroup, Scenario, SignalPlan, TurnSplit, TurningRatios, LOST_TIME_PER_PHASE_S, NUM_PHASES,
    NUM_PHASE_GROUPS,
};
pub use subgroups::{partition_subgroups, Dimension, Level, Partition, SubgroupKey};
