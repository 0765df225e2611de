//! Parameterized layers built on the autodiff tape.

mod attention;
mod dense;
mod temporal;

pub use attention::SelfAttentionBlock;
pub use dense::{Activation, DenseLayer, MlpBlock};
pub use temporal::{
    conv_output_len, deconv_output_len, pool_output_len, TemporalConvLayer, TemporalDeconvLayer, TemporalPoolLayer,
};
