//! Turns one simulated scenario into the static graph used for inflow
//! imputation and the dynamic graph used for the MOE modules.

use corridor_twin::corridor::{build_dynamic_graph, NUM_PHASES};
use corridor_twin::oracle::{build_record, SamplingRanges, SimConfig};

fn main() -> corridor_twin::Result<()> {
    let record = build_record(7, &SamplingRanges::default(), &SimConfig::default())?;
    let s = &record.static_graph;
    println!("static graph: {} nodes, {} edges", s.k(), s.topology.num_edges());
    println!("node features {:?}, edge features {:?}", s.node_features.shape(), s.edge_features.shape());
    for i in 0..s.k() {
        let row: String = (0..NUM_PHASES)
            .map(|p| {
                if s.mask[i * NUM_PHASES + p] {
                    "     ?".to_owned()
                } else {
                    format!("{:6.0}", s.node_features.at(&[i, p]))
                }
            })
            .collect();
        println!("  node {i}{row}");
    }

    // the true volumes stand in for the imputed ones here
    let dynamic = build_dynamic_graph(s, &record.targets.imputed_volumes, &record.dynamic_inputs)?;
    println!(
        "dynamic graph: {} steps, node tensor {:?}, edge tensor {:?}",
        dynamic.w(),
        dynamic.node_tensor.shape(),
        dynamic.edge_features_flat().shape()
    );
    println!("subgroup {:?}", record.subgroup);
    Ok(())
}
