use rayon::prelude::*;

use super::twin::{Prediction, TwinModel};
use crate::corridor::{DynamicInputs, StaticGraphSample};
use crate::error::{Error, Result};

/// One scenario to run through the full chain.
#[derive(Clone, Copy, Debug)]
pub struct InferenceInput<'a> {
    pub static_graph: &'a StaticGraphSample,
    pub dynamic_inputs: &'a DynamicInputs,
}

#[derive(Debug)]
pub struct BatchPrediction {
    /// Same order as the inputs.
    pub results: Vec<Result<Prediction>>,
    pub failed: Vec<usize>,
}

impl BatchPrediction {
    pub fn succeeded(&self) -> usize {
        self.results.len() - self.failed.len()
    }
}

/// Predicts every input on a pool of `parallelism` threads. A failing
/// sample is reported in place without stopping the others. Output does
/// not depend on `parallelism`.
pub fn predict_batch(model: &TwinModel, inputs: &[InferenceInput<'_>], parallelism: usize) -> Result<BatchPrediction> {
    if parallelism == 0 {
        return Err(Error::invalid("parallelism", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid("parallelism", e.to_string()))?;
    let results: Vec<Result<Prediction>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|x| model.predict(x.static_graph, x.dynamic_inputs))
            .collect()
    });
    let failed = results.iter().enumerate().filter(|(_, r)| r.is_err()).map(|(i, _)| i).collect();
    Ok(BatchPrediction { results, failed })
}
