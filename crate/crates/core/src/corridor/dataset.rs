use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::samples::{DynamicInputs, StaticGraphSample, TargetBundle};
use super::scenario::Scenario;
use super::subgroups::SubgroupKey;
use crate::error::{Error, Result};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario: Scenario,
    pub static_graph: StaticGraphSample,
    pub dynamic_inputs: DynamicInputs,
    pub targets: TargetBundle,
    pub subgroup: SubgroupKey,
}

pub fn write_dataset(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::json(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScenarioRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        rec.scenario.validate()?;
        records.push(rec);
    }
    Ok(records)
}
