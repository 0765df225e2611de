//! Predicts a batch of scenarios at several thread counts and confirms the
//! outputs do not depend on the parallelism.

use std::time::Instant;

use corridor_twin::model::{predict_batch, InferenceInput, ModelConfig, Normalization, TwinModel};
use corridor_twin::oracle::{generate_records, SamplingRanges, SimConfig};

fn main() -> corridor_twin::Result<()> {
    let records = generate_records(200, 9, &SamplingRanges::default(), &SimConfig::default(), 4)?;
    let model = TwinModel::new(ModelConfig::default(), Normalization::identity())?;
    let inputs: Vec<_> = records
        .iter()
        .map(|r| InferenceInput {
            static_graph: &r.static_graph,
            dynamic_inputs: &r.dynamic_inputs,
        })
        .collect();

    let mut reference = None;
    for threads in [1, 2, 4, 8] {
        let start = Instant::now();
        let batch = predict_batch(&model, &inputs, threads)?;
        let secs = start.elapsed().as_secs_f64();
        let bytes = serde_json::to_vec(&batch.results.iter().filter_map(|r| r.as_ref().ok()).collect::<Vec<_>>()).expect("predictions serialize");
        let same = reference.get_or_insert_with(|| bytes.clone()) == &bytes;
        println!(
            "{threads} thread(s): {:.1} scenarios/s, {} failed, identical to 1 thread: {same}",
            inputs.len() as f64 / secs,
            batch.failed.len()
        );
    }
    Ok(())
}
