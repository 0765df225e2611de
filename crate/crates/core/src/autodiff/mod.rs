//! Reverse-mode automatic differentiation over dense `f64` arrays, plus Adam.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Elementwise and structural primitives addressable by kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Subtract,
    Multiply,
    Relu,
    LeakyRelu(f64),
    Concat(usize),
    Reshape(Vec<usize>),
    ReduceSum(usize),
    ReduceMean(usize),
    MseLoss,
}

impl Tape {
    /// Applies `kind` to `inputs`, checking arity.
    pub fn apply(&mut self, kind: &Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(
                    format!("{kind:?}"),
                    format!("expects {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match kind {
            Primitive::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            Primitive::Subtract => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            Primitive::Multiply => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            Primitive::Relu => arity(1).and_then(|_| self.relu(inputs[0])),
            Primitive::LeakyRelu(slope) => arity(1).and_then(|_| self.leaky_relu(inputs[0], *slope)),
            Primitive::Concat(axis) => self.concat(inputs, *axis),
            Primitive::Reshape(shape) => arity(1).and_then(|_| self.reshape(inputs[0], shape)),
            Primitive::ReduceSum(axis) => arity(1).and_then(|_| self.reduce_sum(inputs[0], *axis)),
            Primitive::ReduceMean(axis) => arity(1).and_then(|_| self.reduce_mean(inputs[0], *axis)),
            Primitive::MseLoss => arity(2).and_then(|_| self.mse_loss(inputs[0], inputs[1])),
        }
    }
}

#[cfg(test)]
mod tests;
