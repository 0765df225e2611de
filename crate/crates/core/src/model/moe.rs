use rand::Rng;

use super::config::TemporalMode;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::corridor::NUM_PHASES;
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, TemporalConvLayer, TemporalDeconvLayer, TemporalPoolLayer};

const DECONV_MID: usize = 32;
const ENCODER_CHANNELS: usize = 16;

#[derive(Clone, Debug)]
struct Branch {
    expand: TemporalDeconvLayer,
    narrow: TemporalDeconvLayer,
}

/// Per-node MOE head producing `[p×w]` non-negative values from the
/// travel-time module's node embeddings.
#[derive(Clone, Debug)]
pub struct MoeHead {
    mode: TemporalMode,
    abstraction: Option<DenseLayer>,
    branches: [Branch; 2],
    encoder: TemporalConvLayer,
    pool: TemporalPoolLayer,
    output: DenseLayer,
    hidden: usize,
    w: usize,
}

impl MoeHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        w: usize,
        mode: TemporalMode,
        rng: &mut R,
    ) -> Result<Self> {
        if w < 3 {
            return Err(Error::invalid("moe head", format!("needs w >= 3, got {w}")));
        }
        let abstraction = (mode == TemporalMode::Abstract)
            .then(|| DenseLayer::new(store, &format!("{name}.abstract"), hidden * w, hidden, Activation::Relu, rng));
        let mut branch = |dir: &str| Branch {
            expand: TemporalDeconvLayer::new(store, &format!("{name}.{dir}.deconv1"), hidden, DECONV_MID, w, 1, rng),
            narrow: TemporalDeconvLayer::new(store, &format!("{name}.{dir}.deconv2"), DECONV_MID, ENCODER_CHANNELS, 1, 1, rng),
        };
        let branches = [branch("eastbound"), branch("westbound")];
        let encoder = TemporalConvLayer::new(
            store,
            &format!("{name}.encoder"),
            ENCODER_CHANNELS,
            ENCODER_CHANNELS,
            3,
            1,
            1,
            rng,
        );
        let pool = TemporalPoolLayer::new(2, 1);
        let encoded = pool.output_len(w).expect("w >= 3");
        let output = DenseLayer::new(
            store,
            &format!("{name}.output"),
            2 * ENCODER_CHANNELS * encoded,
            NUM_PHASES * w,
            Activation::Relu,
            rng,
        );
        Ok(Self {
            mode,
            abstraction,
            branches,
            encoder,
            pool,
            output,
            hidden,
            w,
        })
    }

    /// `hidden: [N×w×d]` node embeddings to scaled `[N×p·w]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, hidden: Var) -> Result<Var> {
        let shape = tape.shape(hidden).to_vec();
        if shape.len() != 3 || shape[1] != self.w || shape[2] != self.hidden {
            return Err(Error::shape("moe_head_forward", &shape, &[0, self.w, self.hidden]));
        }
        let n = shape[0];
        let summary = match &self.abstraction {
            None => tape.reduce_mean(hidden, 1)?,
            Some(dense) => {
                let flat = tape.reshape(hidden, &[n, self.w * self.hidden])?;
                dense.forward(tape, params, flat)?
            }
        };
        let seq = tape.reshape(summary, &[n, self.hidden, 1])?;
        let mut encoded = Vec::with_capacity(2);
        for b in &self.branches {
            let x = b.expand.forward(tape, params, seq)?;
            let x = tape.relu(x)?;
            let x = b.narrow.forward(tape, params, x)?;
            let x = tape.relu(x)?;
            let x = self.encoder.forward(tape, params, x)?;
            let x = tape.relu(x)?;
            let x = self.pool.forward(tape, x)?;
            let len = tape.shape(x)[2];
            encoded.push(tape.reshape(x, &[n, ENCODER_CHANNELS * len])?);
        }
        let joined = tape.concat(&encoded, 1)?;
        self.output.forward(tape, params, joined)
    }

    pub fn mode(&self) -> TemporalMode {
        self.mode
    }
}
