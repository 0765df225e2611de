//! Graph attention over corridor topologies, edge embeddings and fusion.

mod fusion;
mod gat;
mod topology;

pub use fusion::{
    directional_pool, directional_pool_batched, fuse_embeddings, fuse_embeddings_batched, EdgeMlp, EMBEDDING_WIDTH,
};
pub use gat::{GatLayer, HeadAggregation};
pub use topology::{Direction, GraphTopology};
