use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{overrides, CliError, Common, UsageError, THREADS_ENV};
use crate::corridor::read_dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_and_report, EvalOptions, Moe};
use crate::model::{
    dataset_digest, load_checkpoint, predict_batch, save_checkpoint, train_sequential_with, InferenceInput,
    ModelConfig, Normalization, Prediction, TrainConfig, TwinModel,
};
use crate::oracle::{
    generate_dataset, generate_records, sample_scenario, scenario_seed, simulate_scenario, write_event_log_csv,
    SamplingRanges, SimConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub n: usize,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub sim: SimConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            seed: 0,
            ranges: SamplingRanges::default(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n: usize,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub sim: SimConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            ranges: SamplingRanges::default(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub n: usize,
    pub parallelism: usize,
    pub wall_time_s: f64,
    pub scenarios_per_s: f64,
    pub baseline_wall_time_s: Option<f64>,
    pub speedup: Option<f64>,
    /// Whether the parallel run matched the single-thread run bit for bit.
    pub identical_outputs: Option<bool>,
    pub failed: usize,
    /// Time spent simulating the input scenarios, not part of the timing.
    pub oracle_wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command: the effective configuration,
/// the seed, the worker count and digests of every input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub parallelism: usize,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(UsageError(msg.into()))
}

fn require_file(flag: &str, path: &Path) -> std::result::Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("missing file for {flag}: {}", path.display())))
    }
}

fn load_config<T>(common: &Common, dotted: &[(String, String)]) -> std::result::Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let base = match &common.config {
        None => T::default(),
        Some(path) => {
            require_file("--config", path)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
    };
    Ok(overrides::apply(&base, dotted)?)
}

/// `--parallelism`, then the environment, then the CPU count.
fn parallelism(common: &Common) -> std::result::Result<usize, CliError> {
    let n = match common.parallelism {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(usage("parallelism must be at least 1"));
    }
    Ok(n)
}

fn invalid_config(e: Error) -> CliError {
    match e {
        Error::Invalid { .. } => usage(e.to_string()),
        other => other.into(),
    }
}

fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn manifest(command: &str, seed: Option<u64>, parallelism: usize, config: &impl Serialize, inputs: Vec<FileDigest>, outputs: Vec<PathBuf>) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        parallelism,
        config: serde_json::to_value(config).expect("config serializes"),
        inputs,
        outputs,
    }
}

pub(super) fn generate(
    common: &Common,
    dotted: &[(String, String)],
    n: Option<usize>,
    event_log: Option<PathBuf>,
    event_log_count: usize,
) -> std::result::Result<(), CliError> {
    let mut cfg: GenerateConfig = load_config(common, dotted)?;
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.ranges.validate().map_err(invalid_config)?;
    cfg.sim.validate(cfg.ranges.interval_s).map_err(invalid_config)?;
    let threads = parallelism(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("data.jsonl"));
    ensure_parent(&out)?;
    let manifest = generate_dataset(cfg.n, cfg.seed, &cfg.ranges, &cfg.sim, threads, &out)?;
    eprintln!(
        "wrote {} scenarios to {} (sha256 {})",
        manifest.n,
        out.display(),
        manifest.dataset_sha256
    );
    if let Some(dir) = event_log {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let sim = SimConfig {
            record_events: true,
            ..cfg.sim.clone()
        };
        for i in 0..event_log_count.min(cfg.n) {
            let scenario = sample_scenario(scenario_seed(cfg.seed, i), &cfg.ranges)?;
            let run = simulate_scenario(&scenario, &sim)?;
            write_event_log_csv(&dir.join(format!("scenario{i:05}.events.csv")), &run.events)?;
        }
    }
    Ok(())
}

pub(super) fn train(common: &Common, dotted: &[(String, String)], data: &Path) -> std::result::Result<(), CliError> {
    let mut cfg: TrainConfig = load_config(common, dotted)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(invalid_config)?;
    require_file("--data", data)?;
    let threads = parallelism(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    ensure_parent(&out)?;
    let records = read_dataset(data)?;
    let start = Instant::now();
    let outcome = train_sequential_with(&records, &cfg, |e| {
        if e.epoch % 10 == 0 {
            eprintln!(
                "{:>11} epoch {:>4}  train {:.6}  validation {:.6}  ({:.0} s)",
                e.stage.name(),
                e.epoch,
                e.train_loss,
                e.validation_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    save_checkpoint(&out, &outcome.model, Some(&outcome.metadata))?;

    let curves = out.with_extension("loss.csv");
    let mut csv = String::from("stage,epoch,train_loss,validation_loss,best_validation\n");
    for c in &outcome.metadata.curves {
        for (e, ((t, v), b)) in c.train_loss.iter().zip(&c.validation_loss).zip(&c.best_validation).enumerate() {
            csv.push_str(&format!("{},{e},{t},{v},{b}\n", c.stage.name()));
        }
    }
    std::fs::write(&curves, csv).map_err(|e| Error::io(&curves, e))?;

    let run = manifest("train", Some(cfg.seed), threads, &cfg, vec![file_digest(data)?], vec![out.clone(), curves]);
    write_json(&out.with_extension("run.json"), &run)?;
    eprintln!("wrote {} ({:.0} s)", out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

pub(super) fn eval(common: &Common, dotted: &[(String, String)], data: &Path, model: &Path, all: bool) -> std::result::Result<(), CliError> {
    let mut opts: EvalOptions = load_config(common, dotted)?;
    require_file("--data", data)?;
    require_file("--model", model)?;
    opts.parallelism = parallelism(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let records = read_dataset(data)?;
    let checkpoint = load_checkpoint(model)?;
    let held_out = match (&checkpoint.training, all) {
        (Some(t), false) if t.dataset_digest == dataset_digest(&records) => Some(t.split.test.clone()),
        _ => None,
    };
    let twin = checkpoint.into_model()?;
    let subset: Vec<_> = match &held_out {
        Some(idx) => idx.iter().map(|&i| &records[i]).collect(),
        None => records.iter().collect(),
    };
    let evaluation = evaluate_and_report(&twin, &subset, &out, &opts)?;
    println!(
        "scored {} scenarios ({})",
        subset.len(),
        if held_out.is_some() { "held-out split" } else { "whole dataset" }
    );
    for moe in Moe::ALL {
        if let Some(row) = evaluation.report.total(moe) {
            let cells: Vec<String> = moe
                .metrics()
                .iter()
                .map(|m| format!("{}={}", m.name(), row.values.get(*m).map_or("null".into(), |v| format!("{v:.4}"))))
                .collect();
            println!("{:<18} {}", moe.name(), cells.join("  "));
        }
    }
    let run = manifest(
        "eval",
        None,
        opts.parallelism,
        &serde_json::json!({ "options": opts, "held_out_only": held_out.is_some() }),
        vec![file_digest(data)?, file_digest(model)?],
        evaluation.files,
    );
    write_json(&out.join("run.json"), &run)?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    index: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<&'a Prediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub(super) fn infer(common: &Common, dotted: &[(String, String)], data: &Path, model: &Path) -> std::result::Result<(), CliError> {
    if let Some((path, _)) = dotted.first() {
        return Err(usage(format!("infer has no config field `{path}`")));
    }
    require_file("--data", data)?;
    require_file("--model", model)?;
    let threads = parallelism(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("predictions.jsonl"));
    ensure_parent(&out)?;
    let records = read_dataset(data)?;
    let twin = load_checkpoint(model)?.into_model()?;
    let inputs: Vec<_> = records
        .iter()
        .map(|r| InferenceInput {
            static_graph: &r.static_graph,
            dynamic_inputs: &r.dynamic_inputs,
        })
        .collect();
    let batch = predict_batch(&twin, &inputs, threads)?;
    let mut buf = Vec::new();
    for (i, (r, res)) in records.iter().zip(&batch.results).enumerate() {
        let line = PredictionLine {
            index: i,
            seed: r.scenario.seed,
            prediction: res.as_ref().ok(),
            error: res.as_ref().err().map(|e| e.to_string()),
        };
        serde_json::to_writer(&mut buf, &line).map_err(|e| Error::json(&out, e))?;
        buf.push(b'\n');
    }
    std::fs::File::create(&out)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(&out, e))?;
    let run = manifest(
        "infer",
        None,
        threads,
        &Value::Null,
        vec![file_digest(data)?, file_digest(model)?],
        vec![out.clone()],
    );
    write_json(&out.with_extension("run.json"), &run)?;
    if !batch.failed.is_empty() {
        return Err(Error::invalid(
            "inference",
            format!("{} of {} scenarios failed: {:?}", batch.failed.len(), records.len(), batch.failed),
        )
        .into());
    }
    eprintln!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

pub(super) fn bench(
    common: &Common,
    dotted: &[(String, String)],
    n: Option<usize>,
    model: Option<&Path>,
    baseline: bool,
) -> std::result::Result<(), CliError> {
    let mut cfg: BenchConfig = load_config(common, dotted)?;
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.ranges.validate().map_err(invalid_config)?;
    let threads = parallelism(common)?;
    let mut inputs_digest = Vec::new();
    let twin = match model {
        Some(path) => {
            require_file("--model", path)?;
            inputs_digest.push(file_digest(path)?);
            load_checkpoint(path)?.into_model()?
        }
        None => TwinModel::new(
            ModelConfig {
                k: cfg.ranges.k,
                w: cfg.ranges.w,
                ..ModelConfig::default()
            },
            Normalization::identity(),
        )
        .map_err(invalid_config)?,
    };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("bench.json"));
    ensure_parent(&out)?;

    let start = Instant::now();
    let records = generate_records(cfg.n, cfg.seed, &cfg.ranges, &cfg.sim, threads)?;
    let oracle_wall_time_s = start.elapsed().as_secs_f64();
    let inputs: Vec<_> = records
        .iter()
        .map(|r| InferenceInput {
            static_graph: &r.static_graph,
            dynamic_inputs: &r.dynamic_inputs,
        })
        .collect();

    let timed = |p: usize| -> Result<(f64, Vec<u8>, usize)> {
        let start = Instant::now();
        let batch = predict_batch(&twin, &inputs, p)?;
        let secs = start.elapsed().as_secs_f64();
        let mut bytes = Vec::new();
        for r in &batch.results {
            if let Ok(p) = r {
                serde_json::to_writer(&mut bytes, p).expect("predictions serialize");
            }
            bytes.push(b'\n');
        }
        Ok((secs, bytes, batch.failed.len()))
    };
    let (wall, outputs, failed) = timed(threads)?;
    let (baseline_wall_time_s, speedup, identical_outputs) = if baseline {
        let (base, base_out, _) = if threads == 1 { (wall, outputs.clone(), failed) } else { timed(1)? };
        (Some(base), Some(base / wall), Some(base_out == outputs))
    } else {
        (None, None, None)
    };
    let summary = BenchSummary {
        n: cfg.n,
        parallelism: threads,
        wall_time_s: wall,
        scenarios_per_s: cfg.n as f64 / wall,
        baseline_wall_time_s,
        speedup,
        identical_outputs,
        failed,
        oracle_wall_time_s,
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    write_json(&out, &summary)?;
    let run = manifest("bench", Some(cfg.seed), threads, &cfg, inputs_digest, vec![out.clone()]);
    write_json(&out.with_extension("run.json"), &run)?;
    Ok(())
}
