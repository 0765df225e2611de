use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::None => Ok(x),
        }
    }
}

/// Fully connected layer: `activation(x · Wᵀ + b)` with `W: [out×in]`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    weight: ParamId,
    bias: ParamId,
    in_width: usize,
    out_width: usize,
    activation: Activation,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::glorot(&[out_width, in_width], in_width, out_width, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_width]));
        Self {
            weight,
            bias,
            in_width,
            out_width,
            activation,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `x: [batch×in]` to `[batch×out]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.in_width {
            return Err(Error::shape("dense_forward", shape, &[shape[0], self.in_width]));
        }
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let h = tape.matmul_ext(x, w, true)?;
        let h = tape.add_broadcast(h, b, 1)?;
        self.activation.apply(tape, h)
    }
}

/// Chain of dense layers.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    layers: Vec<DenseLayer>,
}

impl MlpBlock {
    /// `widths` lists input width followed by each layer's output width.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(store, &format!("{name}.{i}"), w[0], w[1], activation, rng))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp", "no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_width != pair[1].in_width {
                return Err(Error::shape(
                    "mlp",
                    &[pair[0].in_width, pair[0].out_width],
                    &[pair[1].in_width, pair[1].out_width],
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(tape, params, h))
    }
}
