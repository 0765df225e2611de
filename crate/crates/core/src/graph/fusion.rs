use std::sync::Arc;

use rand::Rng;

use super::topology::{Direction, GraphTopology};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, MlpBlock};

pub const EMBEDDING_WIDTH: usize = 64;

/// Maps `[static ‖ series]` edge rows to `width`-wide embeddings
/// ([`EMBEDDING_WIDTH`] in the full-size model).
#[derive(Clone, Debug)]
pub struct EdgeMlp {
    mlp: MlpBlock,
    static_width: usize,
    series_len: usize,
}

impl EdgeMlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        static_width: usize,
        series_len: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let widths = [static_width + series_len, width, width];
        Self {
            mlp: MlpBlock::new(store, name, &widths, Activation::Relu, rng),
            static_width,
            series_len,
        }
    }

    pub fn mlp(&self) -> &MlpBlock {
        &self.mlp
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, static_feats: Var, series: Var) -> Result<Var> {
        let (s, t) = (tape.shape(static_feats).to_vec(), tape.shape(series).to_vec());
        if s.len() != 2 || t.len() != 2 || s[0] != t[0] || s[1] != self.static_width || t[1] != self.series_len {
            return Err(Error::shape("edge_mlp_forward", &s, &t));
        }
        let x = tape.concat(&[static_feats, series], 1)?;
        self.mlp.forward(tape, params, x)
    }
}

/// Mean edge embedding per direction for `copies` stacked graphs sharing
/// `topo`. `embeddings` is `[copies·|E|×d]`; both outputs are `[copies×d]`.
pub fn directional_pool_batched(
    tape: &mut Tape,
    topo: &GraphTopology,
    embeddings: Var,
    copies: usize,
) -> Result<(Var, Var)> {
    let shape = tape.shape(embeddings).to_vec();
    let e = topo.num_edges();
    if shape.len() != 2 || shape[0] != copies * e {
        return Err(Error::shape("directional_pool", &shape, &[copies * e, shape.get(1).copied().unwrap_or(0)]));
    }
    let mut pool = |dir: Direction| -> Result<Var> {
        let members = topo.edge_indices(dir);
        if members.is_empty() {
            return Err(Error::invalid("directional_pool", format!("no {dir:?} edges")));
        }
        let rows: Vec<usize> = (0..copies).flat_map(|c| members.iter().map(move |&m| c * e + m)).collect();
        let owner: Vec<usize> = (0..copies).flat_map(|c| std::iter::repeat_n(c, members.len())).collect();
        let picked = tape.gather_rows(embeddings, Arc::from(rows))?;
        let summed = tape.scatter_add_rows(picked, Arc::from(owner), copies)?;
        tape.scale(summed, 1.0 / members.len() as f64)
    };
    Ok((pool(Direction::Eastbound)?, pool(Direction::Westbound)?))
}

/// Single-graph pooling; outputs are `[d]`.
pub fn directional_pool(tape: &mut Tape, topo: &GraphTopology, embeddings: Var) -> Result<(Var, Var)> {
    let (eb, wb) = directional_pool_batched(tape, topo, embeddings, 1)?;
    let d = tape.shape(eb)[1];
    Ok((tape.reshape(eb, &[d])?, tape.reshape(wb, &[d])?))
}

/// `[graphs×k×d]` node embeddings with `[graphs×d]` pools to
/// `[graphs×3d]`: node mean, eastbound pool, westbound pool.
pub fn fuse_embeddings_batched(tape: &mut Tape, nodes: Var, eastbound: Var, westbound: Var) -> Result<Var> {
    let ns = tape.shape(nodes).to_vec();
    let (es, ws) = (tape.shape(eastbound).to_vec(), tape.shape(westbound).to_vec());
    if ns.len() != 3 || es != [ns[0], ns[2]] || ws != es {
        return Err(Error::shape("fuse_embeddings", &ns, &es));
    }
    let mean = tape.reduce_mean(nodes, 1)?;
    tape.concat(&[mean, eastbound, westbound], 1)
}

/// Single-graph fusion: `[k×d]`, `[d]`, `[d]` to `[3d]`.
pub fn fuse_embeddings(tape: &mut Tape, nodes: Var, eastbound: Var, westbound: Var) -> Result<Var> {
    let ns = tape.shape(nodes).to_vec();
    let (es, ws) = (tape.shape(eastbound).to_vec(), tape.shape(westbound).to_vec());
    if ns.len() != 2 || es != [ns[1]] || ws != es {
        return Err(Error::shape("fuse_embeddings", &ns, &es));
    }
    let d = ns[1];
    let nodes = tape.reshape(nodes, &[1, ns[0], d])?;
    let eb = tape.reshape(eastbound, &[1, d])?;
    let wb = tape.reshape(westbound, &[1, d])?;
    let fused = fuse_embeddings_batched(tape, nodes, eb, wb)?;
    tape.reshape(fused, &[3 * d])
}
