use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::SimConfig;
use super::sampling::{sample_scenario, SamplingRanges};
use super::sim::simulate_scenario;
use crate::corridor::{
    build_dynamic_inputs, build_static_graph, partition_subgroups, write_dataset, Dimension, Level, Scenario,
    ScenarioRecord, SubgroupKey,
};
use crate::error::{Error, Result};

/// Seed of scenario `index` in a dataset generated from `seed`.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

pub fn subgroup_key(scenario: &Scenario, completed_trips: [usize; 2]) -> SubgroupKey {
    SubgroupKey {
        cycle_length_s: scenario.mean_cycle_length_s(),
        completed_volume: (completed_trips[0] + completed_trips[1]) as f64,
        max_green_fraction: scenario.major_through_green_fraction(),
    }
}

/// Samples, simulates and converts one scenario.
pub fn build_record(seed: u64, ranges: &SamplingRanges, config: &SimConfig) -> Result<ScenarioRecord> {
    let scenario = sample_scenario(seed, ranges)?;
    let sim = simulate_scenario(&scenario, config)?;
    let static_graph = build_static_graph(&scenario, &sim.outputs)?;
    let dynamic_inputs = build_dynamic_inputs(&scenario, &sim.outputs)?;
    Ok(ScenarioRecord {
        subgroup: subgroup_key(&scenario, sim.outputs.completed_trips),
        targets: sim.outputs.targets,
        scenario,
        static_graph,
        dynamic_inputs,
    })
}

/// Records for scenarios `0..n`, built on `parallelism` threads; the order
/// follows the scenario index regardless of scheduling.
pub fn generate_records(
    n: usize,
    seed: u64,
    ranges: &SamplingRanges,
    config: &SimConfig,
    parallelism: usize,
) -> Result<Vec<ScenarioRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid("parallelism", e.to_string()))?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| build_record(scenario_seed(seed, i), ranges, config))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub config_digest: String,
    pub dataset: PathBuf,
    pub dataset_sha256: String,
    /// `dimension/level` to scenario count.
    pub subgroup_counts: BTreeMap<String, usize>,
    pub ranges: SamplingRanges,
    pub sim: SimConfig,
}

pub fn config_digest(ranges: &SamplingRanges, config: &SimConfig) -> String {
    let bytes = serde_json::to_vec(&(ranges, config)).expect("configs serialize");
    hex::encode(Sha256::digest(bytes))
}

pub fn subgroup_counts(keys: &[SubgroupKey]) -> BTreeMap<String, usize> {
    let partition = partition_subgroups(keys);
    let mut out = BTreeMap::new();
    for dim in Dimension::ALL {
        for level in Level::ALL {
            out.insert(format!("{dim}/{level}"), partition.count(dim, level));
        }
    }
    out
}

/// Manifest written next to a dataset: `data.jsonl` gets `data.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

/// Writes the dataset as JSON lines plus its manifest.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    ranges: &SamplingRanges,
    config: &SimConfig,
    parallelism: usize,
    path: &Path,
) -> Result<DatasetManifest> {
    let records = generate_records(n, seed, ranges, config, parallelism)?;
    write_dataset(path, &records)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let keys: Vec<SubgroupKey> = records.iter().map(|r| r.subgroup).collect();
    let manifest = DatasetManifest {
        seed,
        n,
        config_digest: config_digest(ranges, config),
        dataset: path.to_path_buf(),
        dataset_sha256: hex::encode(Sha256::digest(&bytes)),
        subgroup_counts: subgroup_counts(&keys),
        ranges: ranges.clone(),
        sim: config.clone(),
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&mpath, e))?;
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
