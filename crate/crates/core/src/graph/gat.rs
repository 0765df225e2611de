use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topology::GraphTopology;
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

const SCORE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadAggregation {
    Concatenate,
    Single,
}

#[derive(Clone, Debug)]
struct Head {
    node_weight: ParamId,
    edge_weight: ParamId,
    // rows: target slot, source slot, edge slot
    attention: ParamId,
}

/// Multi-head graph attention with edge features in the score.
///
/// Every node attends over its in-neighbours plus itself; the self edge
/// carries zero edge features.
#[derive(Clone, Debug)]
pub struct GatLayer {
    heads: Vec<Head>,
    hidden: usize,
    in_width: usize,
    edge_width: usize,
    aggregation: HeadAggregation,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        edge_width: usize,
        heads: usize,
        hidden: usize,
        aggregation: HeadAggregation,
        rng: &mut R,
    ) -> Result<Self> {
        match (aggregation, heads) {
            (_, 0) => return Err(Error::invalid("gat", "at least one head is required")),
            (HeadAggregation::Single, h) if h != 1 => {
                return Err(Error::invalid("gat", format!("single aggregation with {h} heads")))
            }
            _ => {}
        }
        if in_width == 0 || edge_width == 0 || hidden == 0 {
            return Err(Error::invalid("gat", "widths must be positive"));
        }
        let heads = (0..heads)
            .map(|h| Head {
                node_weight: store.add(
                    format!("{name}.head{h}.weight"),
                    Tensor::glorot(&[hidden, in_width], in_width, hidden, rng),
                ),
                edge_weight: store.add(
                    format!("{name}.head{h}.edge_weight"),
                    Tensor::glorot(&[hidden, edge_width], edge_width, hidden, rng),
                ),
                attention: store.add(
                    format!("{name}.head{h}.attention"),
                    Tensor::glorot(&[3, hidden], 3 * hidden, 1, rng),
                ),
            })
            .collect();
        Ok(Self {
            heads,
            hidden,
            in_width,
            edge_width,
            aggregation,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn edge_width(&self) -> usize {
        self.edge_width
    }

    pub fn out_width(&self) -> usize {
        self.hidden * self.heads.len()
    }

    pub fn aggregation(&self) -> HeadAggregation {
        self.aggregation
    }

    pub fn head_params(&self, head: usize) -> (ParamId, ParamId, ParamId) {
        let h = &self.heads[head];
        (h.node_weight, h.edge_weight, h.attention)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, topo: &GraphTopology, nodes: Var, edges: Var) -> Result<Var> {
        self.forward_with_attention(tape, params, topo, nodes, edges).map(|(out, _)| out)
    }

    /// Also returns per-head attention coefficients, one per entry of the
    /// topology's attention edge list.
    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        topo: &GraphTopology,
        nodes: Var,
        edges: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let n = topo.num_nodes();
        if tape.shape(nodes) != [n, self.in_width] {
            return Err(Error::shape("gat_forward", tape.shape(nodes), &[n, self.in_width]));
        }
        if tape.shape(edges) != [topo.num_edges(), self.edge_width] {
            return Err(Error::shape(
                "gat_forward",
                tape.shape(edges),
                &[topo.num_edges(), self.edge_width],
            ));
        }
        let src = topo.attention_sources();
        let dst = topo.attention_targets();
        let self_edges = tape.constant(Tensor::zeros(&[n, 1]));
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut alphas = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = tape.param(params, head.node_weight);
            let we = tape.param(params, head.edge_weight);
            let a = tape.param(params, head.attention);
            let z = tape.matmul_ext(nodes, w, true)?;
            let a_dst = tape.slice(a, 0, 0, 1)?;
            let a_src = tape.slice(a, 0, 1, 1)?;
            let a_edge = tape.slice(a, 0, 2, 1)?;
            let s_dst = tape.matmul_ext(z, a_dst, true)?;
            let s_src = tape.matmul_ext(z, a_src, true)?;
            // a_edge · (W_e r) evaluated as r · (W_eᵀ a_edge)
            let u = tape.matmul(a_edge, we)?;
            let s_edge = if topo.num_edges() > 0 {
                let s = tape.matmul_ext(edges, u, true)?;
                tape.concat(&[s, self_edges], 0)?
            } else {
                self_edges
            };
            let by_dst = tape.gather_rows(s_dst, dst.clone())?;
            let by_src = tape.gather_rows(s_src, src.clone())?;
            let score = tape.add(by_dst, by_src)?;
            let score = tape.add(score, s_edge)?;
            let score = tape.leaky_relu(score, SCORE_SLOPE)?;
            let score = tape.reshape(score, &[dst.len()])?;
            let alpha = tape.segment_softmax(score, dst.clone(), n)?;
            let messages = tape.gather_rows(z, src.clone())?;
            let messages = tape.scale_rows(messages, alpha)?;
            let h = tape.scatter_add_rows(messages, dst.clone(), n)?;
            outputs.push(tape.relu(h)?);
            alphas.push(alpha);
        }
        let out = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat(&outputs, 1)?
        };
        Ok((out, alphas))
    }
}
