//! Runs a two-head graph attention layer over a five-intersection corridor
//! and prints each node's attention over its neighbours.

use corridor_twin::autodiff::{ParamStore, Tape, Tensor};
use corridor_twin::graph::{GatLayer, GraphTopology, HeadAggregation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> corridor_twin::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let topo = GraphTopology::chain(5)?;
    let mut store = ParamStore::new();
    let gat = GatLayer::new(&mut store, "gat", 4, 3, 2, 8, HeadAggregation::Concatenate, &mut rng)?;

    let mut tape = Tape::new();
    let nodes = tape.constant(Tensor::uniform(&[5, 4], 1.0, &mut rng));
    let edges = tape.constant(Tensor::uniform(&[topo.num_edges(), 3], 1.0, &mut rng));
    let (out, alphas) = gat.forward_with_attention(&mut tape, &store, &topo, nodes, edges)?;
    println!("output shape {:?}", tape.value(out).shape());

    let (src, dst) = (topo.attention_sources(), topo.attention_targets());
    for (h, a) in alphas.iter().enumerate() {
        println!("head {h}");
        for node in 0..5 {
            let weights: Vec<String> = (0..src.len())
                .filter(|&j| dst[j] == node)
                .map(|j| format!("{}:{:.3}", src[j], tape.value(*a).data()[j]))
                .collect();
            println!("  node {node} attends {}", weights.join(" "));
        }
    }
    Ok(())
}
