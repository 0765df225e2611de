use serde::{Deserialize, Serialize};

use crate::corridor::NUM_PHASES;
use crate::error::{Error, Result};

/// How the MOE heads turn the per-step node embeddings into the single
/// step fed to the transposed convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    /// Average over time steps.
    #[default]
    Mean,
    /// Learned projection of the flattened step sequence.
    Abstract,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub w: usize,
    pub phases: usize,
    pub hidden: usize,
    pub heads: usize,
    pub temporal_mode: TemporalMode,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 8,
            w: 10,
            phases: NUM_PHASES,
            hidden: 64,
            heads: 4,
            temporal_mode: TemporalMode::Mean,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("model.k", "need at least 2 intersections"));
        }
        if self.w < 3 {
            return Err(Error::invalid("model.w", "the MOE encoder needs at least 3 intervals"));
        }
        if self.phases != NUM_PHASES {
            return Err(Error::invalid("model.phases", format!("must be {NUM_PHASES}")));
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::invalid("model.heads", "hidden width must split evenly across heads"));
        }
        Ok(())
    }
}

/// Index of each module in per-stage arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Inflow,
    TravelTime,
    Queue,
    Waiting,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Self::Inflow, Self::TravelTime, Self::Queue, Self::Waiting];

    pub fn prefix(self) -> &'static str {
        match self {
            Self::Inflow => "inflow.",
            Self::TravelTime => "travel.",
            Self::Queue => "queue.",
            Self::Waiting => "waiting.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Inflow => "inflow",
            Self::TravelTime => "travel_time",
            Self::Queue => "queue",
            Self::Waiting => "waiting",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Epochs per stage in training order.
    pub stage_epochs: [usize; 4],
    pub learning_rates: [f64; 4],
    pub batch_size: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    pub standardize: bool,
    /// Train the queue and waiting heads together under one optimizer.
    pub shared_moe_optimizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            stage_epochs: [150, 200, 150, 150],
            learning_rates: [1e-3, 1e-3, 5e-4, 5e-4],
            batch_size: 32,
            split: [0.70, 0.15, 0.15],
            seed: 0,
            standardize: true,
            shared_moe_optimizer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::invalid("train.split", format!("{:?} does not sum to 1", self.split)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be positive"));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::invalid("train.learning_rates", "must be positive"));
        }
        Ok(())
    }
}
