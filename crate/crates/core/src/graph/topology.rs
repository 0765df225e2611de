use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Eastbound,
    Westbound,
}

/// Directed graph over corridor intersections. Node indices run west to east.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TopologyRecord", try_from = "TopologyRecord")]
pub struct GraphTopology {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    directions: Vec<Direction>,
    // Edge list extended with one self edge per node, used by attention.
    att_src: Arc<[usize]>,
    att_dst: Arc<[usize]>,
}

impl GraphTopology {
    /// Bidirectional chain: eastbound edges west to east, then westbound
    /// edges east to west.
    pub fn chain(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("topology", format!("a corridor needs at least 2 intersections, got {k}")));
        }
        let mut edges: Vec<(usize, usize)> = (0..k - 1).map(|i| (i, i + 1)).collect();
        edges.extend((1..k).rev().map(|i| (i, i - 1)));
        let directions = (0..2 * (k - 1))
            .map(|e| if e < k - 1 { Direction::Eastbound } else { Direction::Westbound })
            .collect();
        Self::new(k, edges, directions)
    }

    /// Arbitrary edge list; an edge pointing to a higher index is eastbound.
    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let directions = edges
            .iter()
            .map(|&(s, t)| if s <= t { Direction::Eastbound } else { Direction::Westbound })
            .collect();
        Self::new(num_nodes, edges, directions)
    }

    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, directions: Vec<Direction>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::invalid("topology", "no nodes"));
        }
        if directions.len() != edges.len() {
            return Err(Error::invalid(
                "topology",
                format!("{} direction tags for {} edges", directions.len(), edges.len()),
            ));
        }
        if let Some((e, &(s, t))) = edges.iter().enumerate().find(|(_, &(s, t))| s >= num_nodes || t >= num_nodes) {
            return Err(Error::invalid(
                "topology",
                format!("edge {e} ({s}->{t}) references a node outside 0..{num_nodes}"),
            ));
        }
        let att_src: Vec<usize> = edges.iter().map(|e| e.0).chain(0..num_nodes).collect();
        let att_dst: Vec<usize> = edges.iter().map(|e| e.1).chain(0..num_nodes).collect();
        Ok(Self {
            num_nodes,
            edges,
            directions,
            att_src: att_src.into(),
            att_dst: att_dst.into(),
        })
    }

    /// Disjoint union of `copies` relabelled copies, copy-major.
    pub fn replicate(&self, copies: usize) -> Self {
        assert!(copies > 0, "replicate needs at least one copy");
        let n = self.num_nodes;
        let edges = (0..copies)
            .flat_map(|c| self.edges.iter().map(move |&(s, t)| (s + c * n, t + c * n)))
            .collect();
        let directions = (0..copies).flat_map(|_| self.directions.iter().copied()).collect();
        Self::new(n * copies, edges, directions).expect("replicated topology is valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn edge_indices(&self, direction: Direction) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.directions[e] == direction).collect()
    }

    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == node).map(|e| e.0).collect()
    }

    /// Sources of the attention edge list (edges then self edges).
    pub fn attention_sources(&self) -> Arc<[usize]> {
        self.att_src.clone()
    }

    /// Targets of the attention edge list (edges then self edges).
    pub fn attention_targets(&self) -> Arc<[usize]> {
        self.att_dst.clone()
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyRecord {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    directions: Vec<Direction>,
}

impl From<GraphTopology> for TopologyRecord {
    fn from(t: GraphTopology) -> Self {
        Self {
            num_nodes: t.num_nodes,
            edges: t.edges,
            directions: t.directions,
        }
    }
}

impl TryFrom<TopologyRecord> for GraphTopology {
    type Error = Error;

    fn try_from(r: TopologyRecord) -> Result<Self> {
        GraphTopology::new(r.num_nodes, r.edges, r.directions)
    }
}
