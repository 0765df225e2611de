use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Stage};
use super::inflow::{inflow_inputs, InflowModule};
use super::moe::MoeHead;
use super::normalize::Normalization;
use super::travel::{free_flow_times, travel_time_inputs, TravelTimeModule, TravelTimeOutputs};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::corridor::{build_dynamic_graph, DynamicGraphSample, DynamicInputs, StaticGraphSample, NUM_PHASES};
use crate::error::{Error, Result};

/// The four learned modules sharing one parameter store. Parameter names
/// carry the owning module's prefix (`inflow.`, `travel.`, `queue.`,
/// `waiting.`).
#[derive(Clone, Debug)]
pub struct TwinModel {
    pub config: ModelConfig,
    pub norm: Normalization,
    pub params: ParamStore,
    inflow: InflowModule,
    travel: TravelTimeModule,
    queue: MoeHead,
    waiting: MoeHead,
}

/// Everything the twin predicts for one scenario, in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `[k×p]`, observed entries passed through.
    pub imputed_volumes: Tensor,
    pub travel_time_eb: Vec<f64>,
    pub travel_time_wb: Vec<f64>,
    /// `[k×p×w]`
    pub queue_length: Tensor,
    pub waiting_time: Tensor,
}

impl TwinModel {
    pub fn new(config: ModelConfig, norm: Normalization) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let (h, heads, w) = (config.hidden, config.heads, config.w);
        let inflow = InflowModule::new(&mut params, config.k, h, heads, &mut rng)?;
        let travel = TravelTimeModule::new(&mut params, h, heads, w, &mut rng)?;
        let queue = MoeHead::new(&mut params, "queue", h, w, config.temporal_mode, &mut rng)?;
        let waiting = MoeHead::new(&mut params, "waiting", h, w, config.temporal_mode, &mut rng)?;
        Ok(Self {
            config,
            norm,
            params,
            inflow,
            travel,
            queue,
            waiting,
        })
    }

    pub fn inflow(&self) -> &InflowModule {
        &self.inflow
    }

    fn head(&self, stage: Stage) -> Result<&MoeHead> {
        match stage {
            Stage::Queue => Ok(&self.queue),
            Stage::Waiting => Ok(&self.waiting),
            _ => Err(Error::invalid("moe head", format!("{} has no MOE head", stage.name()))),
        }
    }

    fn check_static(&self, s: &StaticGraphSample) -> Result<()> {
        let k = self.config.k;
        if s.k() != k || s.node_features.shape() != [k, NUM_PHASES] || s.mask.len() != k * NUM_PHASES {
            return Err(Error::shape("twin_inflow", s.node_features.shape(), &[k, NUM_PHASES]));
        }
        Ok(())
    }

    /// Scaled inflow predictions `[B·k×p]` for a batch on `tape`.
    pub fn inflow_batch(&self, tape: &mut Tape, params: &ParamStore, samples: &[&StaticGraphSample]) -> Result<Var> {
        let first = samples.first().ok_or_else(|| Error::invalid("inflow batch", "empty batch"))?;
        for s in samples {
            self.check_static(s)?;
        }
        let (nodes, edges) = inflow_inputs(&self.norm, samples)?;
        let topo = first.topology.replicate(samples.len());
        let nodes = tape.constant(nodes);
        let edges = tape.constant(edges);
        self.inflow.forward(tape, params, &topo, nodes, edges)
    }

    /// Scaled delays over free flow and node embeddings for a batch.
    pub fn travel_batch(&self, tape: &mut Tape, params: &ParamStore, samples: &[&DynamicGraphSample]) -> Result<TravelTimeOutputs> {
        let first = samples.first().ok_or_else(|| Error::invalid("travel batch", "empty batch"))?;
        if first.topology.num_nodes() != self.config.k || first.w() != self.config.w {
            return Err(Error::shape(
                "twin_travel_time",
                first.node_tensor.shape(),
                &[self.config.k, 0, self.config.w],
            ));
        }
        let (nodes, edges) = travel_time_inputs(&self.norm, samples)?;
        let nodes = tape.constant(nodes);
        let edges = tape.constant(edges);
        self.travel.forward(tape, params, &first.topology, samples.len(), nodes, edges)
    }

    /// Scaled head outputs `[N×p·w]` from `[N×w×d]` embeddings.
    pub fn moe_batch(&self, tape: &mut Tape, params: &ParamStore, stage: Stage, hidden: Var) -> Result<Var> {
        self.head(stage)?.forward(tape, params, hidden)
    }

    /// Imputed `[k×p]` volumes: model output at masked entries (never
    /// negative), observed values elsewhere.
    pub fn forward_inflow(&self, sample: &StaticGraphSample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let z = self.inflow_batch(&mut tape, &self.params, &[sample])?;
        let z = tape.value(z).data();
        let x = sample.node_features.data();
        let data = (0..x.len())
            .map(|j| if sample.mask[j] { (z[j] * self.norm.volume_scale).max(0.0) } else { x[j] })
            .collect();
        Tensor::new(vec![self.config.k, NUM_PHASES], data)
    }

    /// Both direction series and the node embeddings `[k×d×w]`.
    pub fn forward_travel_time(&self, sample: &DynamicGraphSample) -> Result<(Vec<f64>, Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let out = self.travel_batch(&mut tape, &self.params, &[sample])?;
        let scale = self.norm.travel_time_scale;
        let [fe, fw] = free_flow_times(&sample.topology, &sample.edge_static)?;
        let eb = tape.value(out.eastbound).data().iter().map(|v| fe + v * scale).collect();
        let wb = tape.value(out.westbound).data().iter().map(|v| fw + v * scale).collect();
        let (k, w, d) = (self.config.k, self.config.w, self.config.hidden);
        let h = tape.value(out.hidden).data();
        let mut channels_first = vec![0.0; k * d * w];
        for i in 0..k {
            for t in 0..w {
                for c in 0..d {
                    channels_first[(i * d + c) * w + t] = h[(i * w + t) * d + c];
                }
            }
        }
        Ok((eb, wb, Tensor::new(vec![k, d, w], channels_first)?))
    }

    /// Queue or waiting-time head on `[k×d×w]` embeddings, `[k×p×w]` out.
    pub fn forward_moe_head(&self, stage: Stage, hidden: &Tensor) -> Result<Tensor> {
        let (k, w, d) = (self.config.k, self.config.w, self.config.hidden);
        if hidden.shape() != [k, d, w] {
            return Err(Error::shape("forward_moe_head", hidden.shape(), &[k, d, w]));
        }
        let src = hidden.data();
        let mut steps_first = vec![0.0; k * w * d];
        for i in 0..k {
            for c in 0..d {
                for t in 0..w {
                    steps_first[(i * w + t) * d + c] = src[(i * d + c) * w + t];
                }
            }
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![k, w, d], steps_first)?);
        let y = self.moe_batch(&mut tape, &self.params, stage, h)?;
        let scale = if stage == Stage::Queue { self.norm.queue_scale } else { self.norm.waiting_scale };
        Tensor::new(vec![k, NUM_PHASES, w], tape.value(y).data().iter().map(|v| v * scale).collect())
    }

    /// Full chain for one scenario.
    pub fn predict(&self, sample: &StaticGraphSample, inputs: &DynamicInputs) -> Result<Prediction> {
        let imputed = self.forward_inflow(sample)?;
        let dynamic = build_dynamic_graph(sample, &imputed, inputs)?;
        let (eb, wb, hidden) = self.forward_travel_time(&dynamic)?;
        Ok(Prediction {
            queue_length: self.forward_moe_head(Stage::Queue, &hidden)?,
            waiting_time: self.forward_moe_head(Stage::Waiting, &hidden)?,
            imputed_volumes: imputed,
            travel_time_eb: eb,
            travel_time_wb: wb,
        })
    }
}
