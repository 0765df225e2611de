use serde::{Deserialize, Serialize};

use super::travel::free_flow_times;
use crate::corridor::{ScenarioRecord, MASK_SENTINEL, NODE_TIME_FEATURES, NUM_PHASES, STATIC_EDGE_FEATURES};
use crate::error::{Error, Result};

/// Per-column z-score. Constant columns get unit spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Fits from `(column, value)` observations.
    pub fn fit(width: usize, values: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut n = vec![0usize; width];
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for (c, v) in values {
            n[c] += 1;
            sum[c] += v;
            sq[c] += v * v;
        }
        let mean: Vec<f64> = (0..width).map(|c| if n[c] > 0 { sum[c] / n[c] as f64 } else { 0.0 }).collect();
        let std = (0..width)
            .map(|c| {
                if n[c] == 0 {
                    return 1.0;
                }
                let var = (sq[c] / n[c] as f64 - mean[c] * mean[c]).max(0.0);
                if var.sqrt() > 1e-9 * mean[c].abs().max(1.0) {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, column: usize, value: f64) -> f64 {
        (value - self.mean[column]) / self.std[column]
    }
}

/// Input standardizers and output scales, fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Observed per-phase volume totals.
    pub inflow: Standardizer,
    pub edge_static: Standardizer,
    pub density: Standardizer,
    /// The 14 per-interval node features.
    pub node_time: Standardizer,
    /// Output multipliers: a head predicting 1 means one scale unit.
    pub volume_scale: f64,
    /// Applies to travel time in excess of free flow.
    pub travel_time_scale: f64,
    pub queue_scale: f64,
    pub waiting_scale: f64,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut s) = (0usize, 0.0);
    for v in values {
        n += 1;
        s += v * v;
    }
    let r = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
    if r > 1e-9 {
        r
    } else {
        1.0
    }
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            inflow: Standardizer::identity(NUM_PHASES),
            edge_static: Standardizer::identity(STATIC_EDGE_FEATURES),
            density: Standardizer::identity(1),
            node_time: Standardizer::identity(NODE_TIME_FEATURES),
            volume_scale: 1.0,
            travel_time_scale: 1.0,
            queue_scale: 1.0,
            waiting_scale: 1.0,
        }
    }

    /// Statistics over `records`. Node-time volume columns use the observed
    /// per-interval counts and, where masked, the true totals spread evenly.
    pub fn fit(records: &[&ScenarioRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("normalization", "no training records"));
        }
        let inflow = Standardizer::fit(
            NUM_PHASES,
            records.iter().flat_map(|r| {
                r.static_graph
                    .node_features
                    .data()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != MASK_SENTINEL)
                    .map(|(i, &v)| (i % NUM_PHASES, v))
                    .collect::<Vec<_>>()
            }),
        );
        let edge_static = Standardizer::fit(
            STATIC_EDGE_FEATURES,
            records.iter().flat_map(|r| {
                r.static_graph
                    .edge_features
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (i % STATIC_EDGE_FEATURES, v))
                    .collect::<Vec<_>>()
            }),
        );
        let density = Standardizer::fit(
            1,
            records.iter().flat_map(|r| r.dynamic_inputs.edge_density.data().iter().map(|&v| (0, v))),
        );
        let mut node_obs = Vec::new();
        for r in records {
            let counts = r.dynamic_inputs.detector_counts.data();
            let truth = r.targets.imputed_volumes.data();
            let w = r.dynamic_inputs.detector_counts.shape()[2];
            for (slot, &total) in truth.iter().enumerate() {
                for s in 0..w {
                    let c = counts[slot * w + s];
                    let v = if c == MASK_SENTINEL { total / w as f64 } else { c };
                    node_obs.push((slot % NUM_PHASES, v));
                }
            }
            for (j, &v) in r.dynamic_inputs.signal_features.data().iter().enumerate() {
                node_obs.push((NUM_PHASES + j % (NODE_TIME_FEATURES - NUM_PHASES), v));
            }
        }
        let node_time = Standardizer::fit(NODE_TIME_FEATURES, node_obs.into_iter());
        let volume_scale = rms(records.iter().flat_map(|r| {
            r.static_graph
                .mask
                .iter()
                .zip(r.targets.imputed_volumes.data())
                .filter(|(m, _)| **m)
                .map(|(_, &v)| v)
                .collect::<Vec<_>>()
        }));
        let mut delays = Vec::new();
        for r in records {
            let [fe, fw] = free_flow_times(&r.static_graph.topology, &r.static_graph.edge_features)?;
            delays.extend(r.targets.travel_time_eb.iter().map(|t| t - fe));
            delays.extend(r.targets.travel_time_wb.iter().map(|t| t - fw));
        }
        let travel_time_scale = rms(delays.into_iter());
        let queue_scale = rms(records.iter().flat_map(|r| r.targets.queue_length.data().iter().copied()));
        let waiting_scale = rms(records.iter().flat_map(|r| r.targets.waiting_time.data().iter().copied()));
        Ok(Self {
            inflow,
            edge_static,
            density,
            node_time,
            volume_scale,
            travel_time_scale,
            queue_scale,
            waiting_scale,
        })
    }
}
