//! One-dimensional convolution, transposed convolution and max-pooling over
//! `[batch×channels×length]` inputs. Rank-2 `[channels×length]` inputs are
//! treated as a batch of one.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn as_batched(tape: &mut Tape, x: Var, op: &'static str) -> Result<(Var, bool)> {
    match *tape.shape(x) {
        [c, l] => Ok((tape.reshape(x, &[1, c, l])?, true)),
        [_, _, _] => Ok((x, false)),
        ref s => Err(Error::shape(op, s, &[0, 0, 0])),
    }
}

fn unbatch(tape: &mut Tape, y: Var, squeeze: bool) -> Result<Var> {
    if squeeze {
        let s = tape.shape(y).to_vec();
        tape.reshape(y, &s[1..])
    } else {
        Ok(y)
    }
}

pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (len + 2 * padding >= kernel && stride > 0).then(|| (len + 2 * padding - kernel) / stride + 1)
}

pub fn deconv_output_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - 1) * stride + kernel
}

pub fn pool_output_len(len: usize, window: usize, stride: usize) -> Option<usize> {
    (len >= window && stride > 0).then(|| (len - window) / stride + 1)
}

/// Cross-correlation layer, kernels `[out×in×width]`.
#[derive(Clone, Debug)]
pub struct TemporalConvLayer {
    kernels: ParamId,
    bias: ParamId,
    in_channels: usize,
    out_channels: usize,
    width: usize,
    stride: usize,
    padding: usize,
}

impl TemporalConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let kernels = store.add(
            format!("{name}.kernels"),
            Tensor::glorot(
                &[out_channels, in_channels, width],
                in_channels * width,
                out_channels * width,
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            kernels,
            bias,
            in_channels,
            out_channels,
            width,
            stride,
            padding,
        }
    }

    pub fn kernels(&self) -> ParamId {
        self.kernels
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        conv_output_len(len, self.width, self.stride, self.padding)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let (xb, squeeze) = as_batched(tape, x, "conv1d_forward")?;
        if tape.shape(xb)[1] != self.in_channels {
            return Err(Error::shape(
                "conv1d_forward",
                tape.shape(xb),
                &[self.out_channels, self.in_channels, self.width],
            ));
        }
        let k = tape.param(params, self.kernels);
        let b = tape.param(params, self.bias);
        let y = tape.conv1d(xb, k, self.stride, self.padding)?;
        let y = tape.add_broadcast(y, b, 1)?;
        unbatch(tape, y, squeeze)
    }
}

/// Transposed convolution, kernels `[in×out×width]`.
#[derive(Clone, Debug)]
pub struct TemporalDeconvLayer {
    kernels: ParamId,
    bias: ParamId,
    in_channels: usize,
    out_channels: usize,
    width: usize,
    stride: usize,
}

impl TemporalDeconvLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let kernels = store.add(
            format!("{name}.kernels"),
            Tensor::glorot(
                &[in_channels, out_channels, width],
                in_channels * width,
                out_channels * width,
                rng,
            ),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            kernels,
            bias,
            in_channels,
            out_channels,
            width,
            stride,
        }
    }

    pub fn kernels(&self) -> ParamId {
        self.kernels
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_len(&self, len: usize) -> usize {
        deconv_output_len(len, self.width, self.stride)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let (xb, squeeze) = as_batched(tape, x, "convtranspose1d_forward")?;
        if tape.shape(xb)[1] != self.in_channels {
            return Err(Error::shape(
                "convtranspose1d_forward",
                tape.shape(xb),
                &[self.in_channels, self.out_channels, self.width],
            ));
        }
        let k = tape.param(params, self.kernels);
        let b = tape.param(params, self.bias);
        let y = tape.conv_transpose1d(xb, k, self.stride)?;
        let y = tape.add_broadcast(y, b, 1)?;
        unbatch(tape, y, squeeze)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalPoolLayer {
    pub window: usize,
    pub stride: usize,
}

impl TemporalPoolLayer {
    pub fn new(window: usize, stride: usize) -> Self {
        Self { window, stride }
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        pool_output_len(len, self.window, self.stride)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (xb, squeeze) = as_batched(tape, x, "maxpool1d_forward")?;
        let y = tape.maxpool1d(xb, self.window, self.stride)?;
        unbatch(tape, y, squeeze)
    }
}
