use rand::Rng;

use super::dense::{Activation, DenseLayer};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Single-head scaled dot-product self-attention over a token set.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    query: DenseLayer,
    key: DenseLayer,
    value: DenseLayer,
    model_width: usize,
}

impl SelfAttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        model_width: usize,
        rng: &mut R,
    ) -> Self {
        let mut proj = |role: &str| DenseLayer::new(store, &format!("{name}.{role}"), in_width, model_width, Activation::None, rng);
        let query = proj("query");
        let key = proj("key");
        let value = proj("value");
        Self {
            query,
            key,
            value,
            model_width,
        }
    }

    pub fn model_width(&self) -> usize {
        self.model_width
    }

    pub fn value_projection(&self) -> &DenseLayer {
        &self.value
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        self.forward_with_weights(tape, params, x).map(|(out, _)| out)
    }

    /// Returns the attended output and the attention matrix. Accepts
    /// `[tokens×in]` or a batch `[graphs×tokens×in]`.
    pub fn forward_with_weights(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        let (groups, tokens, width) = match shape[..] {
            [t, w] => (1, t, w),
            [g, t, w] => (g, t, w),
            _ => return Err(Error::shape("self_attention_forward", &shape, &[0, self.query.in_width()])),
        };
        let flat = tape.reshape(x, &[groups * tokens, width])?;
        let d = self.model_width;
        let q = self.query.forward(tape, params, flat)?;
        let k = self.key.forward(tape, params, flat)?;
        let v = self.value.forward(tape, params, flat)?;
        let q = tape.reshape(q, &[groups, tokens, d])?;
        let k = tape.reshape(k, &[groups, tokens, d])?;
        let v = tape.reshape(v, &[groups, tokens, d])?;
        let scores = tape.matmul_ext(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
        let weights = tape.softmax(scores, 2)?;
        let out = tape.matmul(weights, v)?;
        if shape.len() == 2 {
            let out = tape.reshape(out, &[tokens, d])?;
            let weights = tape.reshape(weights, &[tokens, tokens])?;
            Ok((out, weights))
        } else {
            Ok((out, weights))
        }
    }
}
