use rand::Rng;

use super::normalize::Normalization;
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::corridor::{StaticGraphSample, MASK_SENTINEL, NUM_PHASES, STATIC_EDGE_FEATURES};
use crate::error::{Error, Result};
use crate::graph::{GatLayer, GraphTopology, HeadAggregation};
use crate::layers::{Activation, DenseLayer, SelfAttentionBlock};

/// Node input width: standardized volumes plus a mask indicator per phase.
pub const INFLOW_NODE_WIDTH: usize = 2 * NUM_PHASES;

/// Imputes masked per-phase volumes: self-attention over nodes plus a
/// learned per-intersection position embedding, a multi-head and a
/// single-head GAT layer, then a dense head.
#[derive(Clone, Debug)]
pub struct InflowModule {
    attention: SelfAttentionBlock,
    position: ParamId,
    k: usize,
    gat_multi: GatLayer,
    gat_single: GatLayer,
    head: DenseLayer,
}

impl InflowModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, k: usize, hidden: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let attention = SelfAttentionBlock::new(store, "inflow.attention", INFLOW_NODE_WIDTH, hidden, rng);
        let position = store.add("inflow.position", Tensor::zeros(&[k, hidden]));
        let gat_multi = GatLayer::new(
            store,
            "inflow.gat1",
            hidden,
            STATIC_EDGE_FEATURES,
            heads,
            hidden / heads,
            HeadAggregation::Concatenate,
            rng,
        )?;
        let gat_single = GatLayer::new(
            store,
            "inflow.gat2",
            hidden,
            STATIC_EDGE_FEATURES,
            1,
            hidden,
            HeadAggregation::Single,
            rng,
        )?;
        let head = DenseLayer::new(store, "inflow.head", hidden, NUM_PHASES, Activation::None, rng);
        Ok(Self {
            attention,
            position,
            k,
            gat_multi,
            gat_single,
            head,
        })
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    /// `nodes: [B×k×16]`, `edges: [B·|E|×19]` over `topo` replicated B
    /// times. Returns scaled predictions `[B·k×p]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, topo: &GraphTopology, nodes: Var, edges: Var) -> Result<Var> {
        let shape = tape.shape(nodes).to_vec();
        if shape.len() != 3 || shape[1] != self.k || shape[0] * shape[1] != topo.num_nodes() || shape[2] != INFLOW_NODE_WIDTH {
            return Err(Error::shape("inflow_forward", &shape, &[0, self.k, INFLOW_NODE_WIDTH]));
        }
        let d = self.attention.model_width();
        let attended = self.attention.forward(tape, params, nodes)?;
        let attended = tape.reshape(attended, &[shape[0], self.k * d])?;
        let position = tape.param(params, self.position);
        let position = tape.reshape(position, &[self.k * d])?;
        let attended = tape.add_broadcast(attended, position, 1)?;
        let flat = tape.reshape(attended, &[topo.num_nodes(), d])?;
        let h = self.gat_multi.forward(tape, params, topo, flat, edges)?;
        let h = self.gat_single.forward(tape, params, topo, h, edges)?;
        self.head.forward(tape, params, h)
    }
}

/// Node and edge input tensors for a batch of static samples.
pub fn inflow_inputs(norm: &Normalization, samples: &[&StaticGraphSample]) -> Result<(Tensor, Tensor)> {
    let k = samples.first().map_or(0, |s| s.k());
    let mut nodes = Vec::with_capacity(samples.len() * k * INFLOW_NODE_WIDTH);
    let mut edges = Vec::new();
    for s in samples {
        if s.k() != k || s.node_features.shape() != [k, NUM_PHASES] {
            return Err(Error::shape("inflow_inputs", s.node_features.shape(), &[k, NUM_PHASES]));
        }
        let x = s.node_features.data();
        for i in 0..k {
            for p in 0..NUM_PHASES {
                let v = x[i * NUM_PHASES + p];
                nodes.push(if s.mask[i * NUM_PHASES + p] || v == MASK_SENTINEL { 0.0 } else { norm.inflow.apply(p, v) });
            }
            for p in 0..NUM_PHASES {
                nodes.push(if s.mask[i * NUM_PHASES + p] { 1.0 } else { 0.0 });
            }
        }
        if s.edge_features.shape() != [s.topology.num_edges(), STATIC_EDGE_FEATURES] {
            return Err(Error::shape("inflow_inputs", s.edge_features.shape(), &[0, STATIC_EDGE_FEATURES]));
        }
        edges.extend(
            s.edge_features
                .data()
                .iter()
                .enumerate()
                .map(|(j, &v)| norm.edge_static.apply(j % STATIC_EDGE_FEATURES, v)),
        );
    }
    let e = samples.first().map_or(0, |s| s.topology.num_edges());
    Ok((
        Tensor::new(vec![samples.len(), k, INFLOW_NODE_WIDTH], nodes)?,
        Tensor::new(vec![samples.len() * e, STATIC_EDGE_FEATURES], edges)?,
    ))
}
