//! The learned twin: inflow imputation, travel time with node embeddings,
//! and the queue and waiting-time heads, trained one module at a time.

mod checkpoint;
mod config;
mod inflow;
mod moe;
mod normalize;
mod predict;
mod train;
mod travel;
mod twin;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, Stage, TemporalMode, TrainConfig};
pub use inflow::{inflow_inputs, InflowModule, INFLOW_NODE_WIDTH};
pub use moe::MoeHead;
pub use normalize::{Normalization, Standardizer};
pub use predict::{predict_batch, BatchPrediction, InferenceInput};
pub use train::{
    dataset_digest, split_indices, train_sequential, train_sequential_with, EpochReport, Split, StageCurve,
    TrainOutcome, TrainingMetadata,
};
pub use travel::{free_flow_times, travel_time_inputs, TravelTimeModule, TravelTimeOutputs};
pub use twin::{Prediction, TwinModel};
