use serde::{Deserialize, Serialize};

use super::scenario::{Approach, Phase, PhaseGroup, Scenario, NUM_PHASES};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{Direction, GraphTopology};

pub const STATIC_EDGE_FEATURES: usize = 19;
/// Columns of a static edge row.
pub const EDGE_LENGTH: usize = 0;
pub const EDGE_SPEED: usize = 2;
pub const EDGE_SPEED_FACTOR: usize = 13;
pub const NODE_TIME_FEATURES: usize = 14;
pub const SIGNAL_FEATURES: usize = 6;
pub const MASK_SENTINEL: f64 = -1.0;

/// Per-interval detector counts for one lane group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub intersection: usize,
    pub phase: Phase,
    pub counts: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBundle {
    /// `[k×p]` scenario-total detector volumes, veh.
    pub imputed_volumes: Tensor,
    pub travel_time_eb: Vec<f64>,
    pub travel_time_wb: Vec<f64>,
    /// `[k×p×w]` per-interval maximum queue, veh.
    pub queue_length: Tensor,
    /// `[k×p×w]` per-interval mean waiting time, s.
    pub waiting_time: Tensor,
}

/// Simulator results consumed by the graph builders.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleOutputs {
    pub detectors: Vec<DetectorRecord>,
    /// `[|E|×w]` mean vehicles per km on each directed link.
    pub link_density: Tensor,
    pub targets: TargetBundle,
    /// Vehicles completing the corridor, eastbound then westbound.
    pub completed_trips: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticGraphSample {
    pub topology: GraphTopology,
    /// `[k×p]`, masked entries hold [`MASK_SENTINEL`].
    pub node_features: Tensor,
    /// Row-major `[k×p]`.
    pub mask: Vec<bool>,
    /// `[|E|×19]`.
    pub edge_features: Tensor,
}

impl StaticGraphSample {
    pub fn k(&self) -> usize {
        self.topology.num_nodes()
    }
}

/// Inputs of the dynamic graph that do not depend on imputation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicInputs {
    /// `[k×p×w]` observed per-interval counts, masked entries hold the sentinel.
    pub detector_counts: Tensor,
    /// `[k×6]`: cycle, offset, four max-green fractions.
    pub signal_features: Tensor,
    /// `[|E|×w]` veh/km.
    pub edge_density: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraphSample {
    pub topology: GraphTopology,
    /// `[k×14×w]`.
    pub node_tensor: Tensor,
    /// `[|E|×19]`.
    pub edge_static: Tensor,
    /// `[|E|×w]`.
    pub edge_density: Tensor,
}

impl DynamicGraphSample {
    pub fn w(&self) -> usize {
        self.node_tensor.shape()[2]
    }

    /// The volume rows of the node tensor, `[k×p×w]`.
    pub fn temporal_context(&self) -> Tensor {
        let (k, w) = (self.topology.num_nodes(), self.w());
        let src = self.node_tensor.data();
        let data = (0..k)
            .flat_map(|i| src[i * NODE_TIME_FEATURES * w..(i * NODE_TIME_FEATURES + NUM_PHASES) * w].iter().copied())
            .collect();
        Tensor::new(vec![k, NUM_PHASES, w], data).expect("volume rows are non-empty")
    }

    /// `[|E|×(19+w)]`, the edge MLP input.
    pub fn edge_features_flat(&self) -> Tensor {
        let (e, w) = (self.topology.num_edges(), self.w());
        let (s, d) = (self.edge_static.data(), self.edge_density.data());
        let data = (0..e)
            .flat_map(|r| {
                s[r * STATIC_EDGE_FEATURES..(r + 1) * STATIC_EDGE_FEATURES]
                    .iter()
                    .chain(&d[r * w..(r + 1) * w])
                    .copied()
            })
            .collect();
        Tensor::new(vec![e, STATIC_EDGE_FEATURES + w], data).expect("edge list is non-empty")
    }
}

/// Major-street phases at internal intersections.
pub fn mask_positions(k: usize) -> Vec<bool> {
    (0..k)
        .flat_map(|i| Phase::ALL.map(move |p| p.is_major() && i > 0 && i + 1 < k))
        .collect()
}

fn detector_lookup(outputs: &OracleOutputs, k: usize, w: usize) -> Result<Vec<&[f64]>> {
    let mut table: Vec<Option<&[f64]>> = vec![None; k * NUM_PHASES];
    for rec in &outputs.detectors {
        if rec.intersection < k && rec.counts.len() == w {
            table[rec.intersection * NUM_PHASES + rec.phase.index()] = Some(&rec.counts);
        }
    }
    table
        .into_iter()
        .enumerate()
        .map(|(slot, c)| {
            c.ok_or_else(|| Error::MissingDetector {
                intersection: slot / NUM_PHASES,
                phase: Phase::ALL[slot % NUM_PHASES].label(),
            })
        })
        .collect()
}

/// Direction, upstream node and downstream node of edge `e`.
fn edge_ends(topo: &GraphTopology, e: usize) -> (Direction, usize, usize) {
    let (s, t) = topo.edges()[e];
    (topo.directions()[e], s, t)
}

fn static_edge_row(scenario: &Scenario, outputs: &OracleOutputs, topo: &GraphTopology, e: usize) -> [f64; STATIC_EDGE_FEATURES] {
    let (dir, up, down) = edge_ends(topo, e);
    let geo = &scenario.geometry;
    let b = &scenario.behavior;
    let link = up.min(down);
    let approach = if dir == Direction::Eastbound { Approach::Eastbound } else { Approach::Westbound };
    let split = scenario.ratios.split(down, approach);
    let (ut, dt) = (&scenario.signals.intersections[up], &scenario.signals.intersections[down]);
    let upstream_demand: f64 = scenario
        .demand
        .iter()
        .filter(|d| d.intersection == up)
        .map(|d| d.mean_rate_vph())
        .sum();
    let w = outputs.link_density.shape()[1];
    let density = &outputs.link_density.data()[e * w..(e + 1) * w];
    [
        geo.link_length_m[link],
        geo.lanes_per_movement as f64,
        b.free_flow_speed_mps,
        b.saturation_headway_s,
        split.left,
        split.through,
        split.right,
        ut.cycle_length_s,
        ut.offset_s,
        dt.cycle_length_s,
        dt.offset_s,
        dt.max_green_fraction[PhaseGroup::MajorThrough.index()],
        b.startup_lost_time_s,
        b.speed_factor,
        upstream_demand,
        density.iter().sum::<f64>() / w as f64,
        if dir == Direction::Eastbound { 1.0 } else { 0.0 },
        geo.detector_setback_m,
        scenario.interval_s,
    ]
}

pub fn build_static_graph(scenario: &Scenario, outputs: &OracleOutputs) -> Result<StaticGraphSample> {
    let k = scenario.k();
    let topology = GraphTopology::chain(k)?;
    let counts = detector_lookup(outputs, k, scenario.w)?;
    let mask = mask_positions(k);
    let x = counts
        .iter()
        .zip(&mask)
        .map(|(c, &m)| if m { MASK_SENTINEL } else { c.iter().sum() })
        .collect();
    let edges = (0..topology.num_edges())
        .flat_map(|e| static_edge_row(scenario, outputs, &topology, e))
        .collect();
    Ok(StaticGraphSample {
        node_features: Tensor::new(vec![k, NUM_PHASES], x)?,
        mask,
        edge_features: Tensor::new(vec![topology.num_edges(), STATIC_EDGE_FEATURES], edges)?,
        topology,
    })
}

pub fn build_dynamic_inputs(scenario: &Scenario, outputs: &OracleOutputs) -> Result<DynamicInputs> {
    let (k, w) = (scenario.k(), scenario.w);
    let counts = detector_lookup(outputs, k, w)?;
    let mask = mask_positions(k);
    let detector = counts
        .iter()
        .zip(&mask)
        .flat_map(|(c, &m)| c.iter().map(move |&v| if m { MASK_SENTINEL } else { v }))
        .collect();
    let signals = scenario
        .signals
        .intersections
        .iter()
        .flat_map(|t| [t.cycle_length_s, t.offset_s].into_iter().chain(t.max_green_fraction))
        .collect();
    Ok(DynamicInputs {
        detector_counts: Tensor::new(vec![k, NUM_PHASES, w], detector)?,
        signal_features: Tensor::new(vec![k, SIGNAL_FEATURES], signals)?,
        edge_density: outputs.link_density.clone(),
    })
}

/// Observed volumes keep their per-interval counts; imputed totals are
/// spread evenly over the intervals.
pub fn build_dynamic_graph(
    static_sample: &StaticGraphSample,
    imputed: &Tensor,
    inputs: &DynamicInputs,
) -> Result<DynamicGraphSample> {
    let k = static_sample.k();
    let shape = inputs.detector_counts.shape();
    if imputed.shape() != [k, NUM_PHASES] || shape.len() != 3 || shape[..2] != [k, NUM_PHASES] {
        return Err(Error::shape("build_dynamic_graph", imputed.shape(), shape));
    }
    if let Some(pos) = imputed.data().iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::invalid(
            "build_dynamic_graph",
            format!(
                "imputed volume at intersection {} phase {} is {} (sentinel or invalid)",
                pos / NUM_PHASES,
                Phase::ALL[pos % NUM_PHASES].label(),
                imputed.data()[pos]
            ),
        ));
    }
    let w = shape[2];
    let counts = inputs.detector_counts.data();
    let signals = inputs.signal_features.data();
    let mut x = Vec::with_capacity(k * NODE_TIME_FEATURES * w);
    for i in 0..k {
        for p in 0..NUM_PHASES {
            let slot = i * NUM_PHASES + p;
            if static_sample.mask[slot] {
                x.extend(std::iter::repeat_n(imputed.data()[slot] / w as f64, w));
            } else {
                x.extend_from_slice(&counts[slot * w..(slot + 1) * w]);
            }
        }
        for f in 0..SIGNAL_FEATURES {
            x.extend(std::iter::repeat_n(signals[i * SIGNAL_FEATURES + f], w));
        }
    }
    Ok(DynamicGraphSample {
        topology: static_sample.topology.clone(),
        node_tensor: Tensor::new(vec![k, NODE_TIME_FEATURES, w], x)?,
        edge_static: static_sample.edge_features.clone(),
        edge_density: inputs.edge_density.clone(),
    })
}
