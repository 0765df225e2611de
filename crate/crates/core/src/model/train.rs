use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Stage, TrainConfig};
use super::normalize::Normalization;
use super::travel::free_flow_times;
use super::twin::TwinModel;
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::corridor::{build_dynamic_graph, DynamicGraphSample, ScenarioRecord, NUM_PHASES};
use crate::error::{Error, Result};

/// Scenario indices of each partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `fractions`.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let split = Split {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    let parts = [&split.train, &split.validation, &split.test];
    for (name, (part, &f)) in ["train", "validation", "test"].iter().zip(parts.iter().zip(&fractions)) {
        if part.is_empty() && (f > 0.0 || *name != "test") {
            return Err(Error::invalid("split", format!("{name} partition of {n} scenarios is empty")));
        }
    }
    Ok(split)
}

/// Loss history of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCurve {
    pub stage: Stage,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Running minimum of the validation loss.
    pub best_validation: Vec<f64>,
    /// Epoch whose parameters were kept (0-based), if any epoch ran.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainConfig,
    pub dataset_digest: String,
    pub scenarios: usize,
    pub split: Split,
    pub curves: Vec<StageCurve>,
}

/// Progress line emitted after every epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochReport {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

pub struct TrainOutcome {
    pub model: TwinModel,
    pub metadata: TrainingMetadata,
}

/// SHA-256 over the JSON form of every record, in order.
pub fn dataset_digest(records: &[ScenarioRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(serde_json::to_vec(r).expect("records serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn train_sequential(records: &[ScenarioRecord], config: &TrainConfig) -> Result<TrainOutcome> {
    train_sequential_with(records, config, |_| {})
}

/// Trains the four modules one after another, each with its own Adam and
/// with every earlier module frozen. Each stage keeps the parameters of
/// its best validation epoch.
pub fn train_sequential_with(
    records: &[ScenarioRecord],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("training data", "dataset is empty"));
    }
    let model_cfg = &config.model;
    for (i, r) in records.iter().enumerate() {
        if r.scenario.k() != model_cfg.k || r.scenario.w != model_cfg.w {
            return Err(Error::invalid(
                "training data",
                format!(
                    "scenario {i} has k={} w={}, model expects k={} w={}",
                    r.scenario.k(),
                    r.scenario.w,
                    model_cfg.k,
                    model_cfg.w
                ),
            ));
        }
    }
    let split = split_indices(records.len(), config.split, config.seed)?;
    let norm = if config.standardize {
        Normalization::fit(&split.train.iter().map(|&i| &records[i]).collect::<Vec<_>>())?
    } else {
        Normalization::identity()
    };
    let mut model = TwinModel::new(model_cfg.clone(), norm)?;
    let mut trainer = Trainer {
        config,
        split: &split,
        progress: &mut progress,
    };
    let mut curves = Vec::with_capacity(4);

    let statics: Vec<_> = records.iter().map(|r| &r.static_graph).collect();
    curves.push(trainer.run_stage(&mut model, Stage::Inflow, &[Stage::Inflow], records.len(), |m, tape, params, batch| {
        inflow_loss(m, tape, params, batch, records, &statics)
    })?);

    let dynamics: Vec<DynamicGraphSample> = records
        .iter()
        .map(|r| {
            let imputed = model.forward_inflow(&r.static_graph)?;
            build_dynamic_graph(&r.static_graph, &imputed, &r.dynamic_inputs)
        })
        .collect::<Result<_>>()?;
    curves.push(trainer.run_stage(&mut model, Stage::TravelTime, &[Stage::TravelTime], records.len(), |m, tape, params, batch| {
        travel_loss(m, tape, params, batch, records, &dynamics)
    })?);

    let hidden = embed_all(&model, &dynamics, config.batch_size)?;
    if config.shared_moe_optimizer {
        let heads = [Stage::Queue, Stage::Waiting];
        let mut curve = trainer.run_stage(&mut model, Stage::Queue, &heads, records.len(), |m, tape, params, batch| {
            let q = head_loss(m, tape, params, Stage::Queue, batch, records, &hidden)?;
            let w = head_loss(m, tape, params, Stage::Waiting, batch, records, &hidden)?;
            match (q, w) {
                (Some(q), Some(w)) => tape.add(q, w).map(Some),
                _ => Ok(None),
            }
        })?;
        curve.stage = Stage::Queue;
        curves.push(curve);
        curves.push(StageCurve {
            stage: Stage::Waiting,
            train_loss: Vec::new(),
            validation_loss: Vec::new(),
            best_validation: Vec::new(),
            best_epoch: None,
        });
    } else {
        for stage in [Stage::Queue, Stage::Waiting] {
            curves.push(trainer.run_stage(&mut model, stage, &[stage], records.len(), |m, tape, params, batch| {
                head_loss(m, tape, params, stage, batch, records, &hidden)
            })?);
        }
    }

    Ok(TrainOutcome {
        metadata: TrainingMetadata {
            config: config.clone(),
            dataset_digest: dataset_digest(records),
            scenarios: records.len(),
            split,
            curves,
        },
        model,
    })
}

struct Trainer<'a, P: FnMut(&EpochReport)> {
    config: &'a TrainConfig,
    split: &'a Split,
    progress: &'a mut P,
}

impl<P: FnMut(&EpochReport)> Trainer<'_, P> {
    /// `loss` maps a batch of record indices to a scalar mean loss on the
    /// tape, or `None` when the batch carries no supervised entries.
    fn run_stage<L>(&mut self, model: &mut TwinModel, stage: Stage, trained: &[Stage], n: usize, loss: L) -> Result<StageCurve>
    where
        L: Fn(&TwinModel, &mut Tape, &ParamStore, &[usize]) -> Result<Option<Var>>,
    {
        let slot = Stage::ALL.iter().position(|&s| s == stage).expect("known stage");
        let epochs = self.config.stage_epochs[slot];
        let prefixes: Vec<&str> = trained.iter().map(|s| s.prefix()).collect();
        let mut adam = Adam::for_prefixes(AdamConfig::with_learning_rate(self.config.learning_rates[slot]), &model.params, &prefixes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (0x5eed_0000 + slot as u64));
        let mut order = self.split.train.clone();
        let mut curve = StageCurve {
            stage,
            train_loss: Vec::with_capacity(epochs),
            validation_loss: Vec::with_capacity(epochs),
            best_validation: Vec::with_capacity(epochs),
            best_epoch: None,
        };
        let mut best: Option<(f64, ParamStore)> = None;
        let batch_size = self.config.batch_size;
        debug_assert!(self.split.train.iter().all(|&i| i < n));
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for batch in order.chunks(batch_size) {
                let mut tape = Tape::new();
                let step = match loss(model, &mut tape, &model.params, batch)? {
                    Some(l) => {
                        let value = tape.value(l).item();
                        tape.backward(l)?;
                        tape.accumulate_param_grads(&mut model.params);
                        adam.step(&mut model.params)?;
                        Some(value)
                    }
                    None => None,
                };
                if let Some(value) = step {
                    sum += value * batch.len() as f64;
                    count += batch.len();
                }
            }
            let train_loss = if count > 0 { sum / count as f64 } else { 0.0 };
            let validation_loss = self.evaluate(model, &loss)?;
            curve.train_loss.push(train_loss);
            curve.validation_loss.push(validation_loss);
            if best.as_ref().is_none_or(|(b, _)| validation_loss < *b) {
                best = Some((validation_loss, model.params.clone()));
                curve.best_epoch = Some(epoch);
            }
            curve.best_validation.push(best.as_ref().map_or(validation_loss, |(b, _)| *b));
            (self.progress)(&EpochReport {
                stage,
                epoch,
                train_loss,
                validation_loss,
            });
        }
        if let Some((_, params)) = best {
            model.params.copy_values_from(&params)?;
        }
        Ok(curve)
    }

    fn evaluate<L>(&self, model: &TwinModel, loss: &L) -> Result<f64>
    where
        L: Fn(&TwinModel, &mut Tape, &ParamStore, &[usize]) -> Result<Option<Var>>,
    {
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in self.split.validation.chunks(self.config.batch_size) {
            let mut tape = Tape::new();
            if let Some(l) = loss(model, &mut tape, &model.params, batch)? {
                sum += tape.value(l).item() * batch.len() as f64;
                count += batch.len();
            }
        }
        Ok(if count > 0 { sum / count as f64 } else { 0.0 })
    }
}

fn inflow_loss(
    model: &TwinModel,
    tape: &mut Tape,
    params: &ParamStore,
    batch: &[usize],
    records: &[ScenarioRecord],
    statics: &[&crate::corridor::StaticGraphSample],
) -> Result<Option<Var>> {
    let samples: Vec<_> = batch.iter().map(|&i| statics[i]).collect();
    let mut picked = Vec::new();
    let mut target = Vec::new();
    for (b, &i) in batch.iter().enumerate() {
        let truth = records[i].targets.imputed_volumes.data();
        for (j, &m) in records[i].static_graph.mask.iter().enumerate() {
            if m {
                picked.push(b * truth.len() + j);
                target.push(truth[j] / model.norm.volume_scale);
            }
        }
    }
    if picked.is_empty() {
        return Ok(None);
    }
    let z = model.inflow_batch(tape, params, &samples)?;
    let flat = tape.reshape(z, &[batch.len() * model.config.k * NUM_PHASES, 1])?;
    let masked = tape.gather_rows(flat, Arc::from(picked))?;
    let n = target.len();
    let target = tape.constant(Tensor::new(vec![n, 1], target)?);
    tape.mse_loss(masked, target).map(Some)
}

fn travel_loss(
    model: &TwinModel,
    tape: &mut Tape,
    params: &ParamStore,
    batch: &[usize],
    records: &[ScenarioRecord],
    dynamics: &[DynamicGraphSample],
) -> Result<Option<Var>> {
    let samples: Vec<_> = batch.iter().map(|&i| &dynamics[i]).collect();
    let out = model.travel_batch(tape, params, &samples)?;
    let scale = model.norm.travel_time_scale;
    let w = model.config.w;
    let mut targets = [Vec::with_capacity(batch.len() * w), Vec::with_capacity(batch.len() * w)];
    for &i in batch {
        let ff = free_flow_times(&dynamics[i].topology, &dynamics[i].edge_static)?;
        let t = &records[i].targets;
        for (d, series) in [&t.travel_time_eb, &t.travel_time_wb].into_iter().enumerate() {
            targets[d].extend(series.iter().map(|v| (v - ff[d]) / scale));
        }
    }
    let [eb, wb] = targets;
    let te = tape.constant(Tensor::new(vec![batch.len(), w], eb)?);
    let tw = tape.constant(Tensor::new(vec![batch.len(), w], wb)?);
    let le = tape.mse_loss(out.eastbound, te)?;
    let lw = tape.mse_loss(out.westbound, tw)?;
    tape.add(le, lw).map(Some)
}

/// Frozen travel-time embeddings per record, `[k×w×d]` each.
fn embed_all(model: &TwinModel, dynamics: &[DynamicGraphSample], batch_size: usize) -> Result<Vec<Tensor>> {
    let (k, w, d) = (model.config.k, model.config.w, model.config.hidden);
    let mut out = Vec::with_capacity(dynamics.len());
    for chunk in dynamics.chunks(batch_size) {
        let mut tape = Tape::new();
        let samples: Vec<_> = chunk.iter().collect();
        let res = model.travel_batch(&mut tape, &model.params, &samples)?;
        let h = tape.value(res.hidden).data();
        for b in 0..chunk.len() {
            let per = k * w * d;
            out.push(Tensor::new(vec![k, w, d], h[b * per..(b + 1) * per].to_vec())?);
        }
    }
    Ok(out)
}

fn head_loss(
    model: &TwinModel,
    tape: &mut Tape,
    params: &ParamStore,
    stage: Stage,
    batch: &[usize],
    records: &[ScenarioRecord],
    hidden: &[Tensor],
) -> Result<Option<Var>> {
    let (k, w, d) = (model.config.k, model.config.w, model.config.hidden);
    let h: Vec<f64> = batch.iter().flat_map(|&i| hidden[i].data().iter().copied()).collect();
    let h = tape.constant(Tensor::new(vec![batch.len() * k, w, d], h)?);
    let y = model.moe_batch(tape, params, stage, h)?;
    let (scale, pick): (f64, fn(&ScenarioRecord) -> &Tensor) = match stage {
        Stage::Queue => (model.norm.queue_scale, |r| &r.targets.queue_length),
        _ => (model.norm.waiting_scale, |r| &r.targets.waiting_time),
    };
    let target: Vec<f64> = batch.iter().flat_map(|&i| pick(&records[i]).data().iter().map(|v| v / scale)).collect();
    let target = tape.constant(Tensor::new(vec![batch.len() * k, NUM_PHASES * w], target)?);
    tape.mse_loss(y, target).map(Some)
}
