use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    CycleLength,
    TrafficVolume,
    MaxGreen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Self::CycleLength, Self::TrafficVolume, Self::MaxGreen];

    /// Lower edges of Medium and High.
    pub fn boundaries(self) -> (f64, f64) {
        match self {
            Self::CycleLength => (160.0, 200.0),
            Self::TrafficVolume => (700.0, 900.0),
            Self::MaxGreen => (0.25, 0.50),
        }
    }

    pub fn classify(self, value: f64) -> Level {
        let (lo, hi) = self.boundaries();
        if value < lo {
            Level::Low
        } else if value < hi {
            Level::Medium
        } else {
            Level::High
        }
    }
}

impl Level {
    pub const ALL: [Level; 3] = [Self::Low, Self::Medium, Self::High];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CycleLength => "cycle_length",
            Self::TrafficVolume => "traffic_volume",
            Self::MaxGreen => "max_green",
        })
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        })
    }
}

/// Scenario attributes the subgroups are cut on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupKey {
    pub cycle_length_s: f64,
    /// Completed corridor trips, both directions combined.
    pub completed_volume: f64,
    /// Major-through max-green as a fraction of the cycle.
    pub max_green_fraction: f64,
}

impl SubgroupKey {
    pub fn value(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::CycleLength => self.cycle_length_s,
            Dimension::TrafficVolume => self.completed_volume,
            Dimension::MaxGreen => self.max_green_fraction,
        }
    }

    pub fn level(&self, dim: Dimension) -> Level {
        dim.classify(self.value(dim))
    }
}

/// Indices of the members of each (dimension, level) bucket.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    buckets: [[Vec<usize>; 3]; 3],
}

impl Partition {
    pub fn members(&self, dim: Dimension, level: Level) -> &[usize] {
        &self.buckets[dim as usize][level as usize]
    }

    pub fn count(&self, dim: Dimension, level: Level) -> usize {
        self.members(dim, level).len()
    }
}

pub fn partition_subgroups(keys: &[SubgroupKey]) -> Partition {
    let mut p = Partition::default();
    for (i, key) in keys.iter().enumerate() {
        for dim in Dimension::ALL {
            p.buckets[dim as usize][key.level(dim) as usize].push(i);
        }
    }
    p
}
