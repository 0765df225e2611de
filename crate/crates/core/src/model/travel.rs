use std::sync::Arc;

use rand::Rng;

use super::normalize::Normalization;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::corridor::{
    DynamicGraphSample, EDGE_LENGTH, EDGE_SPEED, EDGE_SPEED_FACTOR, NODE_TIME_FEATURES, STATIC_EDGE_FEATURES,
};
use crate::error::{Error, Result};
use crate::graph::{
    directional_pool_batched, fuse_embeddings_batched, EdgeMlp, GatLayer, GraphTopology, HeadAggregation,
};
use crate::layers::{Activation, DenseLayer};

/// Travel-time module. The GAT stack is applied to every time step with
/// shared weights; fused per-step graph embeddings are flattened over time
/// and mapped to one series per direction.
#[derive(Clone, Debug)]
pub struct TravelTimeModule {
    edge_mlp: EdgeMlp,
    gat_multi: GatLayer,
    gat_single: GatLayer,
    eastbound: DenseLayer,
    westbound: DenseLayer,
    hidden: usize,
    w: usize,
}

/// Batch outputs of [`TravelTimeModule::forward`].
#[derive(Clone, Copy, Debug)]
pub struct TravelTimeOutputs {
    /// `[B×w]`, scaled.
    pub eastbound: Var,
    pub westbound: Var,
    /// Pre-fusion node embeddings `[B·k×w×hidden]`.
    pub hidden: Var,
}

impl TravelTimeModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, heads: usize, w: usize, rng: &mut R) -> Result<Self> {
        let edge_mlp = EdgeMlp::new(store, "travel.edge_mlp", STATIC_EDGE_FEATURES, w, hidden, rng);
        let edge_width = edge_mlp.mlp().out_width();
        let gat_multi = GatLayer::new(
            store,
            "travel.gat1",
            NODE_TIME_FEATURES,
            edge_width,
            heads,
            hidden / heads,
            HeadAggregation::Concatenate,
            rng,
        )?;
        let gat_single = GatLayer::new(store, "travel.gat2", hidden, edge_width, 1, hidden, HeadAggregation::Single, rng)?;
        let fused = (hidden + 2 * edge_width) * w;
        let eastbound = DenseLayer::new(store, "travel.eastbound", fused, w, Activation::None, rng);
        let westbound = DenseLayer::new(store, "travel.westbound", fused, w, Activation::None, rng);
        Ok(Self {
            edge_mlp,
            gat_multi,
            gat_single,
            eastbound,
            westbound,
            hidden,
            w,
        })
    }

    /// `nodes: [B·w·k×14]` in (sample, step, node) row order; `edges:
    /// [B·|E|×(19+w)]`. `topo` is the single-scenario topology.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        topo: &GraphTopology,
        batch: usize,
        nodes: Var,
        edges: Var,
    ) -> Result<TravelTimeOutputs> {
        let (k, e, w) = (topo.num_nodes(), topo.num_edges(), self.w);
        if tape.shape(nodes) != [batch * w * k, NODE_TIME_FEATURES] {
            return Err(Error::shape("travel_time_forward", tape.shape(nodes), &[batch * w * k, NODE_TIME_FEATURES]));
        }
        if tape.shape(edges) != [batch * e, STATIC_EDGE_FEATURES + w] {
            return Err(Error::shape("travel_time_forward", tape.shape(edges), &[batch * e, STATIC_EDGE_FEATURES + w]));
        }
        let static_part = tape.slice(edges, 1, 0, STATIC_EDGE_FEATURES)?;
        let series = tape.slice(edges, 1, STATIC_EDGE_FEATURES, w)?;
        let edge_emb = self.edge_mlp.forward(tape, params, static_part, series)?;
        let d = tape.shape(edge_emb)[1];

        let steps = batch * w;
        let graphs = topo.replicate(steps);
        let per_step: Arc<[usize]> = (0..batch)
            .flat_map(|b| (0..w).flat_map(move |_| (0..e).map(move |j| b * e + j)))
            .collect();
        let step_edges = tape.gather_rows(edge_emb, per_step)?;
        let h = self.gat_multi.forward(tape, params, &graphs, nodes, step_edges)?;
        let h = self.gat_single.forward(tape, params, &graphs, h, step_edges)?;

        let (eb_pool, wb_pool) = directional_pool_batched(tape, topo, edge_emb, batch)?;
        let owner: Arc<[usize]> = (0..batch).flat_map(|b| std::iter::repeat_n(b, w)).collect();
        let eb_pool = tape.gather_rows(eb_pool, owner.clone())?;
        let wb_pool = tape.gather_rows(wb_pool, owner)?;
        let grouped = tape.reshape(h, &[steps, k, self.hidden])?;
        let fused = fuse_embeddings_batched(tape, grouped, eb_pool, wb_pool)?;
        let flat = tape.reshape(fused, &[batch, w * (self.hidden + 2 * d)])?;
        let eastbound = self.eastbound.forward(tape, params, flat)?;
        let westbound = self.westbound.forward(tape, params, flat)?;

        // (sample, step, node) rows to (sample, node, step)
        let order: Arc<[usize]> = (0..batch)
            .flat_map(|b| (0..k).flat_map(move |i| (0..w).map(move |t| (b * w + t) * k + i)))
            .collect();
        let by_node = tape.gather_rows(h, order)?;
        let hidden = tape.reshape(by_node, &[batch * k, w, self.hidden])?;
        Ok(TravelTimeOutputs {
            eastbound,
            westbound,
            hidden,
        })
    }
}

/// Node and edge inputs for a batch of dynamic samples.
pub fn travel_time_inputs(norm: &Normalization, samples: &[&DynamicGraphSample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::invalid("travel_time_inputs", "empty batch"))?;
    let (k, w) = (first.topology.num_nodes(), first.w());
    let e = first.topology.num_edges();
    let mut nodes = Vec::with_capacity(samples.len() * w * k * NODE_TIME_FEATURES);
    let mut edges = Vec::with_capacity(samples.len() * e * (STATIC_EDGE_FEATURES + w));
    for s in samples {
        if s.node_tensor.shape() != [k, NODE_TIME_FEATURES, w] || s.edge_density.shape() != [e, w] {
            return Err(Error::shape("travel_time_inputs", s.node_tensor.shape(), &[k, NODE_TIME_FEATURES, w]));
        }
        let x = s.node_tensor.data();
        for t in 0..w {
            for i in 0..k {
                for f in 0..NODE_TIME_FEATURES {
                    nodes.push(norm.node_time.apply(f, x[(i * NODE_TIME_FEATURES + f) * w + t]));
                }
            }
        }
        let (st, dens) = (s.edge_static.data(), s.edge_density.data());
        for j in 0..e {
            for f in 0..STATIC_EDGE_FEATURES {
                edges.push(norm.edge_static.apply(f, st[j * STATIC_EDGE_FEATURES + f]));
            }
            for t in 0..w {
                edges.push(norm.density.apply(0, dens[j * w + t]));
            }
        }
    }
    Ok((
        Tensor::new(vec![samples.len() * w * k, NODE_TIME_FEATURES], nodes)?,
        Tensor::new(vec![samples.len() * e, STATIC_EDGE_FEATURES + w], edges)?,
    ))
}

/// Free-flow corridor travel time per direction `[eastbound, westbound]`
/// from raw static edge rows: link length over speed times speed factor.
pub fn free_flow_times(topology: &GraphTopology, edge_static: &Tensor) -> Result<[f64; 2]> {
    if edge_static.shape() != [topology.num_edges(), STATIC_EDGE_FEATURES] {
        return Err(Error::shape("free_flow_times", edge_static.shape(), &[topology.num_edges(), STATIC_EDGE_FEATURES]));
    }
    let mut out = [0.0; 2];
    for (row, dir) in edge_static.data().chunks_exact(STATIC_EDGE_FEATURES).zip(topology.directions()) {
        let speed = row[EDGE_SPEED] * row[EDGE_SPEED_FACTOR];
        if !(speed > 0.0) {
            return Err(Error::invalid("edge features", "free-flow speed must be positive"));
        }
        out[*dir as usize] += row[EDGE_LENGTH] / speed;
    }
    Ok(out)
}
