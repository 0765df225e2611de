//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to its values in execution
//! order. [`Tape::backward`] replays the records in reverse and accumulates
//! vector-Jacobian products into per-node gradient buffers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    SumAxis {
        input: usize,
        axis: usize,
    },
    MeanAxis {
        input: usize,
        axis: usize,
    },
    SumAll(usize),
    Mse(usize, usize),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    AddBroadcast {
        input: usize,
        bias: usize,
        axis: usize,
    },
    ScaleRows {
        input: usize,
        factors: usize,
    },
    GatherRows {
        input: usize,
        index: Arc<[usize]>,
    },
    ScatterAddRows {
        input: usize,
        index: Arc<[usize]>,
    },
    SegmentSoftmax {
        input: usize,
        segments: Arc<[usize]>,
    },
    Conv1d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose1d {
        input: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool1d {
        input: usize,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Single-threaded: build one tape per forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), usize>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into `(outer, extent, inner)`.
/// Overwrites row-major `c: m×n` with `a·b`, where `a: m×k` and `b: k×n`
/// are read through (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    // SAFETY: the asserts bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x: [N×C×L]` into rows `(n, t)` of `C·K` taps; out-of-range
/// taps are zero.
fn im2col(x: &[f64], [n, c, l]: [usize; 3], k: usize, stride: usize, padding: usize, lo: usize) -> Vec<f64> {
    let ck = c * k;
    let mut cols = vec![0.0; n * lo * ck];
    for ni in 0..n {
        for t in 0..lo {
            let row = &mut cols[(ni * lo + t) * ck..(ni * lo + t + 1) * ck];
            let base = (t * stride) as isize - padding as isize;
            for ci in 0..c {
                let xs = &x[(ni * c + ci) * l..(ni * c + ci + 1) * l];
                for kk in 0..k {
                    let pos = base + kk as isize;
                    if pos >= 0 && (pos as usize) < l {
                        row[ci * k + kk] = xs[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

/// `x: [N×C×L]` as rows `(n, l)` of `C` channels.
fn channels_last(x: &[f64], [n, c, l]: [usize; 3]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            for li in 0..l {
                out[(ni * l + li) * c + ci] = x[(ni * c + ci) * l + li];
            }
        }
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::ForeignTape {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Input value that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input value excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a trainable parameter; repeated calls return the same handle so
    /// gradients from every use accumulate in one buffer.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.id(), id.index());
        if let Some(&index) = self.params.get(&key) {
            return Var {
                tape: self.id,
                index,
            };
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.insert(key, v.index);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "value from a foreign tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.id {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    // ----- elementwise --------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        if va.shape() != vb.shape() {
            return Err(Error::shape(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::from_parts(va.shape().to_vec(), data)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("subtract", a, b, |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Sub(ia, ib), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("multiply", a, b, |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x * factor);
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Scale(ia, factor), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Relu(ia), rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(ia);
        Ok(self.push(out, Op::LeakyRelu(ia, slope), rg))
    }

    // ----- structural ---------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = self.val(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.val(i).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in &idx {
                let v = self.val(i);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { inputs: idx, axis }, rg))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.val(ia).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} exceeds extent {}", start + len, shape[axis]),
            ));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.val(ia).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(ia);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                input: ia,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).clone().reshaped(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.val(ia);
        if axis >= v.rank() {
            return Err(Error::AxisOutOfRange {
                op: if mean { "reduce_mean" } else { "reduce_sum" },
                axis,
                rank: v.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(v.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        let src = v.data();
        for o in 0..outer {
            for e in 0..extent {
                let row = &src[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (acc, x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
        if mean {
            let s = 1.0 / extent as f64;
            data.iter_mut().for_each(|x| *x *= s);
        }
        let shape = without_axis(v.shape(), axis);
        let rg = self.rg(ia);
        let op = if mean {
            Op::MeanAxis { input: ia, axis }
        } else {
            Op::SumAxis { input: ia, axis }
        };
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s: f64 = self.val(ia).data().iter().sum();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(ia), rg))
    }

    /// Mean of squared differences, a scalar.
    pub fn mse_loss(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let (ia, ib) = (self.check(prediction)?, self.check(target)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mse_loss", va.shape(), vb.shape()));
        }
        let n = va.len() as f64;
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(ia, ib), rg))
    }

    // ----- linear algebra -------------------------------------------------

    /// Matrix product `a · b`, or `a · bᵀ` when `trans_b`. Rank-3 inputs are
    /// multiplied batch-wise along the leading axis.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.val(ia).shape().to_vec(), self.val(ib).shape().to_vec());
        let dims = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[r, c]) => Some((1, m, k, r, c)),
            (&[ba, m, k], &[bb, r, c]) if ba == bb => Some((ba, m, k, r, c)),
            _ => None,
        };
        let Some((batch, m, k, r, c)) = dims else {
            return Err(Error::shape("matmul", &sa, &sb));
        };
        let (kb, n) = if trans_b { (c, r) } else { (r, c) };
        if kb != k {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        {
            let (da, db) = (self.val(ia).data(), self.val(ib).data());
            for bi in 0..batch {
                // SAFETY: slices cover exactly m*k, k*n and m*n elements with the
                // given strides.
                unsafe {
                    matrixmultiply::dgemm(
                        m,
                        k,
                        n,
                        1.0,
                        da[bi * m * k..].as_ptr(),
                        k as isize,
                        1,
                        db[bi * k * n..].as_ptr(),
                        rsb,
                        csb,
                        0.0,
                        out[bi * m * n..].as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a: ia, b: ib, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.val(ia);
        if axis >= v.rank() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: v.rank(),
            });
        }
        let (outer, extent, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * extent + e) * inner + i;
                let max = (0..extent).map(|e| src[at(e)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for e in 0..extent {
                    let x = (src[at(e)] - max).exp();
                    out[at(e)] = x;
                    sum += x;
                }
                for e in 0..extent {
                    out[at(e)] /= sum;
                }
            }
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { input: ia, axis }, rg))
    }

    /// Adds a 1-D `bias` along `axis` of `a`.
    pub fn add_broadcast(&mut self, a: Var, bias: Var, axis: usize) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (va, vb) = (self.val(ia), self.val(ib));
        if axis >= va.rank() {
            return Err(Error::AxisOutOfRange {
                op: "add_broadcast",
                axis,
                rank: va.rank(),
            });
        }
        if vb.rank() != 1 || vb.len() != va.shape()[axis] {
            return Err(Error::shape("add_broadcast", va.shape(), vb.shape()));
        }
        let (outer, extent, inner) = split_axis(va.shape(), axis);
        let mut out = va.data().to_vec();
        let b = vb.data();
        for o in 0..outer {
            for (e, &be) in b.iter().enumerate().take(extent) {
                let base = (o * extent + e) * inner;
                out[base..base + inner].iter_mut().for_each(|x| *x += be);
            }
        }
        let shape = va.shape().to_vec();
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::AddBroadcast {
                input: ia,
                bias: ib,
                axis,
            },
            rg,
        ))
    }

    /// Multiplies each leading-axis slice of `a` by the matching entry of
    /// `factors` (which holds one value per slice).
    pub fn scale_rows(&mut self, a: Var, factors: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(factors)?);
        let (va, vf) = (self.val(ia), self.val(ib));
        let rows = va.shape()[0];
        if vf.len() != rows {
            return Err(Error::shape("scale_rows", va.shape(), vf.shape()));
        }
        let inner = va.len() / rows;
        let mut out = va.data().to_vec();
        for (r, &f) in vf.data().iter().enumerate() {
            out[r * inner..(r + 1) * inner].iter_mut().for_each(|x| *x *= f);
        }
        let shape = va.shape().to_vec();
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ScaleRows {
                input: ia,
                factors: ib,
            },
            rg,
        ))
    }

    // ----- graph primitives ---------------------------------------------

    /// Selects leading-axis rows: `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let ia = self.check(a)?;
        let va = self.val(ia);
        let rows = va.shape()[0];
        if index.is_empty() {
            return Err(Error::invalid("gather_rows", "empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(Error::invalid("gather_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let inner = va.len() / rows;
        let src = va.data();
        let mut data = Vec::with_capacity(index.len() * inner);
        for &r in index.iter() {
            data.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[0] = index.len();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::from_parts(shape, data), Op::GatherRows { input: ia, index }, rg))
    }

    /// Sums leading-axis rows into `rows` buckets: `out[index[r]] += a[r]`.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let va = self.val(ia);
        if index.len() != va.shape()[0] {
            return Err(Error::shape("scatter_add_rows", va.shape(), &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(Error::invalid("scatter_add_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let inner = va.len() / va.shape()[0];
        let src = va.data();
        let mut data = vec![0.0; rows * inner];
        for (r, &t) in index.iter().enumerate() {
            for (d, s) in data[t * inner..(t + 1) * inner].iter_mut().zip(&src[r * inner..(r + 1) * inner]) {
                *d += s;
            }
        }
        let mut shape = va.shape().to_vec();
        shape[0] = rows;
        let rg = self.rg(ia);
        Ok(self.push(Tensor::from_parts(shape, data), Op::ScatterAddRows { input: ia, index }, rg))
    }

    /// Softmax over groups of entries sharing a segment id. `a` holds one
    /// value per entry.
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let va = self.val(ia);
        if va.len() != segments.len() {
            return Err(Error::shape("segment_softmax", va.shape(), &[segments.len()]));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
            return Err(Error::invalid("segment_softmax", format!("segment {bad} out of range")));
        }
        let src = va.data();
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (&x, &s) in src.iter().zip(segments.iter()) {
            max[s] = max[s].max(x);
        }
        let mut sum = vec![0.0; num_segments];
        let mut out: Vec<f64> = src
            .iter()
            .zip(segments.iter())
            .map(|(&x, &s)| {
                let e = (x - max[s]).exp();
                sum[s] += e;
                e
            })
            .collect();
        for (y, &s) in out.iter_mut().zip(segments.iter()) {
            *y /= sum[s];
        }
        let shape = va.shape().to_vec();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SegmentSoftmax { input: ia, segments }, rg))
    }

    // ----- temporal primitives ------------------------------------------

    fn conv_shapes(&self, op: &'static str, ix: usize, ik: usize) -> Result<([usize; 3], [usize; 3])> {
        let (sx, sk) = (self.val(ix).shape(), self.val(ik).shape());
        match (sx, sk) {
            (&[n, c, l], &[a, b, k]) => Ok(([n, c, l], [a, b, k])),
            _ => Err(Error::shape(op, sx, sk)),
        }
    }

    /// Cross-correlation of `x: [N×C×L]` with `kernel: [O×C×K]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ix, ik) = (self.check(x)?, self.check(kernel)?);
        let ([n, c, l], [o, kc, k]) = self.conv_shapes("conv1d", ix, ik)?;
        if kc != c || stride == 0 {
            return Err(Error::shape("conv1d", self.val(ix).shape(), self.val(ik).shape()));
        }
        if l + 2 * padding < k {
            return Err(Error::InputTooShort {
                op: "conv1d",
                len: l,
                min: k.saturating_sub(2 * padding),
            });
        }
        let lo = (l + 2 * padding - k) / stride + 1;
        let (xd, wd) = (self.val(ix).data(), self.val(ik).data());
        let ck = c * k;
        let cols = im2col(xd, [n, c, l], k, stride, padding, lo);
        let mut rows = vec![0.0; n * lo * o];
        gemm(n * lo, ck, o, &cols, (ck, 1), wd, (1, ck), &mut rows);
        let mut out = vec![0.0; n * o * lo];
        for ni in 0..n {
            for t in 0..lo {
                for oi in 0..o {
                    out[(ni * o + oi) * lo + t] = rows[(ni * lo + t) * o + oi];
                }
            }
        }
        let rg = self.rg(ix) || self.rg(ik);
        Ok(self.push(
            Tensor::from_parts(vec![n, o, lo], out),
            Op::Conv1d {
                input: ix,
                kernel: ik,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Transposed convolution of `x: [N×C×L]` with `kernel: [C×O×K]`; the
    /// adjoint of [`Tape::conv1d`] for the same kernel array.
    pub fn conv_transpose1d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (ix, ik) = (self.check(x)?, self.check(kernel)?);
        let ([n, c, l], [kc, o, k]) = self.conv_shapes("conv_transpose1d", ix, ik)?;
        if kc != c || stride == 0 {
            return Err(Error::shape("conv_transpose1d", self.val(ix).shape(), self.val(ik).shape()));
        }
        let lo = (l - 1) * stride + k;
        let (xd, wd) = (self.val(ix).data(), self.val(ik).data());
        let ok = o * k;
        let xt = channels_last(xd, [n, c, l]);
        let mut taps = vec![0.0; n * l * ok];
        gemm(n * l, c, ok, &xt, (c, 1), wd, (ok, 1), &mut taps);
        let mut out = vec![0.0; n * o * lo];
        for ni in 0..n {
            for li in 0..l {
                let row = &taps[(ni * l + li) * ok..(ni * l + li + 1) * ok];
                for oi in 0..o {
                    let dst = &mut out[(ni * o + oi) * lo + li * stride..(ni * o + oi) * lo + li * stride + k];
                    for (d, &v) in dst.iter_mut().zip(&row[oi * k..(oi + 1) * k]) {
                        *d += v;
                    }
                }
            }
        }
        let rg = self.rg(ix) || self.rg(ik);
        Ok(self.push(
            Tensor::from_parts(vec![n, o, lo], out),
            Op::ConvTranspose1d {
                input: ix,
                kernel: ik,
                stride,
            },
            rg,
        ))
    }

    /// Windowed maximum over the last axis of `x: [N×C×L]`.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let vx = self.val(ix);
        let &[n, c, l] = vx.shape() else {
            return Err(Error::shape("maxpool1d", vx.shape(), &[0, 0, window]));
        };
        if window == 0 || stride == 0 {
            return Err(Error::invalid("maxpool1d", "window and stride must be positive"));
        }
        if l < window {
            return Err(Error::InputTooShort {
                op: "maxpool1d",
                len: l,
                min: window,
            });
        }
        let lo = (l - window) / stride + 1;
        let src = vx.data();
        let mut out = Vec::with_capacity(n * c * lo);
        let mut argmax = Vec::with_capacity(n * c * lo);
        for row in 0..n * c {
            let xs = &src[row * l..(row + 1) * l];
            for t in 0..lo {
                let mut best = t * stride;
                for j in t * stride + 1..t * stride + window {
                    if xs[j] > xs[best] {
                        best = j;
                    }
                }
                out.push(xs[best]);
                argmax.push(row * l + best);
            }
        }
        let rg = self.rg(ix);
        Ok(self.push(
            Tensor::from_parts(vec![n, c, lo], out),
            Op::MaxPool1d { input: ix, argmax },
            rg,
        ))
    }

    // ----- reverse pass ---------------------------------------------------

    /// Populates gradients of `loss` with respect to every recorded value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if !self.val(il).is_scalar() {
            return Err(Error::NonScalarLoss(self.val(il).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[il] = Some(Tensor::filled(self.val(il).shape(), 1.0));
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds gradients of bound parameters of `store` into their buffers.
    /// Parameters bound on this tape but unreachable from the loss receive
    /// zeros.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let sid = store.id();
        for (&(s, p), &node) in &self.params {
            if s != sid {
                continue;
            }
            let param = store.get_mut(ParamId(p));
            let g = self.grads.get(node).and_then(|g| g.as_ref());
            match (&mut param.grad, g) {
                (Some(acc), Some(g)) => acc.add_assign(g),
                (slot @ None, Some(g)) => *slot = Some(g.clone()),
                (slot @ None, None) => *slot = Some(Tensor::zeros(param.value.shape())),
                (Some(_), None) => {}
            }
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut acc = |j: usize, t: Tensor| {
            if !nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if nodes[*a].requires_grad {
                    let d = gd.iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor::from_parts(va.shape().to_vec(), d));
                }
                if nodes[*b].requires_grad {
                    let d = gd.iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    acc(*b, Tensor::from_parts(vb.shape().to_vec(), d));
                }
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 })
                    .collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::LeakyRelu(a, slope) => {
                let d = gd
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&x, &v)| if v > 0.0 { x } else { slope * x })
                    .collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &j in inputs {
                    let sj = self.val(j).shape();
                    let block = sj[*axis] * inner;
                    if nodes[j].requires_grad {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * total + offset..o * total + offset + block]);
                        }
                        acc(j, Tensor::from_parts(sj.to_vec(), d));
                    }
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let sin = self.val(*input).shape();
                let (outer, extent, inner) = split_axis(sin, *axis);
                let len = out.shape()[*axis];
                let mut d = vec![0.0; self.val(*input).len()];
                for o in 0..outer {
                    let dst = o * extent * inner + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*input, Tensor::from_parts(sin.to_vec(), d));
            }
            Op::Reshape(a) => {
                acc(*a, Tensor::from_parts(self.val(*a).shape().to_vec(), gd.to_vec()));
            }
            Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
                let sin = self.val(*input).shape();
                let (outer, extent, inner) = split_axis(sin, *axis);
                let s = if matches!(nodes[i].op, Op::MeanAxis { .. }) {
                    1.0 / extent as f64
                } else {
                    1.0
                };
                let mut d = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    for _ in 0..extent {
                        d.extend(gd[o * inner..(o + 1) * inner].iter().map(|x| x * s));
                    }
                }
                acc(*input, Tensor::from_parts(sin.to_vec(), d));
            }
            Op::SumAll(a) => {
                acc(*a, Tensor::filled(self.val(*a).shape(), gd[0]));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let s = 2.0 * gd[0] / va.len() as f64;
                let d: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| s * (x - y)).collect();
                if nodes[*b].requires_grad {
                    acc(*b, Tensor::from_parts(vb.shape().to_vec(), d.iter().map(|x| -x).collect()));
                }
                acc(*a, Tensor::from_parts(va.shape().to_vec(), d));
            }
            Op::MatMul { a, b, trans_b } => self.matmul_backward(*a, *b, *trans_b, g, &mut acc),
            Op::Softmax { input, axis } => {
                let (outer, extent, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |e: usize| (o * extent + e) * inner + ii;
                        let dot: f64 = (0..extent).map(|e| gd[at(e)] * y[at(e)]).sum();
                        for e in 0..extent {
                            d[at(e)] = y[at(e)] * (gd[at(e)] - dot);
                        }
                    }
                }
                acc(*input, Tensor::from_parts(out.shape().to_vec(), d));
            }
            Op::AddBroadcast { input, bias, axis } => {
                acc(*input, g.clone());
                if nodes[*bias].requires_grad {
                    let (outer, extent, inner) = split_axis(out.shape(), *axis);
                    let mut d = vec![0.0; extent];
                    for o in 0..outer {
                        for (e, de) in d.iter_mut().enumerate() {
                            let base = (o * extent + e) * inner;
                            *de += gd[base..base + inner].iter().sum::<f64>();
                        }
                    }
                    acc(*bias, Tensor::from_parts(vec![extent], d));
                }
            }
            Op::ScaleRows { input, factors } => {
                let (vx, vf) = (self.val(*input), self.val(*factors));
                let rows = vx.shape()[0];
                let inner = vx.len() / rows;
                if nodes[*input].requires_grad {
                    let mut d = gd.to_vec();
                    for (r, &f) in vf.data().iter().enumerate() {
                        d[r * inner..(r + 1) * inner].iter_mut().for_each(|x| *x *= f);
                    }
                    acc(*input, Tensor::from_parts(vx.shape().to_vec(), d));
                }
                if nodes[*factors].requires_grad {
                    let xd = vx.data();
                    let d = (0..rows)
                        .map(|r| {
                            let span = r * inner..(r + 1) * inner;
                            gd[span.clone()].iter().zip(&xd[span]).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    acc(*factors, Tensor::from_parts(vf.shape().to_vec(), d));
                }
            }
            Op::GatherRows { input, index } => {
                let sin = self.val(*input).shape();
                let inner = out.len() / out.shape()[0];
                let mut d = vec![0.0; self.val(*input).len()];
                for (r, &src) in index.iter().enumerate() {
                    for (dd, gg) in d[src * inner..(src + 1) * inner].iter_mut().zip(&gd[r * inner..(r + 1) * inner]) {
                        *dd += gg;
                    }
                }
                acc(*input, Tensor::from_parts(sin.to_vec(), d));
            }
            Op::ScatterAddRows { input, index } => {
                let sin = self.val(*input).shape();
                let inner = out.len() / out.shape()[0];
                let mut d = Vec::with_capacity(self.val(*input).len());
                for &t in index.iter() {
                    d.extend_from_slice(&gd[t * inner..(t + 1) * inner]);
                }
                acc(*input, Tensor::from_parts(sin.to_vec(), d));
            }
            Op::SegmentSoftmax { input, segments } => {
                let y = out.data();
                let nseg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; nseg];
                for ((&gg, &yy), &s) in gd.iter().zip(y).zip(segments.iter()) {
                    dot[s] += gg * yy;
                }
                let d = gd
                    .iter()
                    .zip(y)
                    .zip(segments.iter())
                    .map(|((&gg, &yy), &s)| yy * (gg - dot[s]))
                    .collect();
                acc(*input, Tensor::from_parts(out.shape().to_vec(), d));
            }
            Op::Conv1d {
                input,
                kernel,
                stride,
                padding,
            } => self.conv1d_backward(*input, *kernel, *stride, *padding, g, &mut acc),
            Op::ConvTranspose1d { input, kernel, stride } => {
                self.conv_transpose1d_backward(*input, *kernel, *stride, g, &mut acc)
            }
            Op::MaxPool1d { input, argmax } => {
                let mut d = vec![0.0; self.val(*input).len()];
                for (&src, &gg) in argmax.iter().zip(gd) {
                    d[src] += gg;
                }
                acc(*input, Tensor::from_parts(self.val(*input).shape().to_vec(), d));
            }
        }
    }

    fn matmul_backward(&self, a: usize, b: usize, trans_b: bool, g: &Tensor, acc: &mut impl FnMut(usize, Tensor)) {
        let (va, vb) = (self.val(a), self.val(b));
        let sa = va.shape();
        let (batch, m, k) = match *sa {
            [m, k] => (1, m, k),
            [bt, m, k] => (bt, m, k),
            _ => unreachable!("matmul operands validated in forward"),
        };
        let n = g.shape()[g.rank() - 1];
        let gd = g.data();
        if self.nodes[a].requires_grad {
            // dA = dC · op(B)ᵀ
            let (rs, cs) = if trans_b { (k as isize, 1) } else { (1, n as isize) };
            let mut d = vec![0.0; va.len()];
            for bi in 0..batch {
                // SAFETY: buffers sized m*n, k*n, m*k per batch element.
                unsafe {
                    matrixmultiply::dgemm(
                        m,
                        n,
                        k,
                        1.0,
                        gd[bi * m * n..].as_ptr(),
                        n as isize,
                        1,
                        vb.data()[bi * k * n..].as_ptr(),
                        rs,
                        cs,
                        0.0,
                        d[bi * m * k..].as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            acc(a, Tensor::from_parts(sa.to_vec(), d));
        }
        if self.nodes[b].requires_grad {
            let mut d = vec![0.0; vb.len()];
            for bi in 0..batch {
                let (ap, gp, dp) = (
                    va.data()[bi * m * k..].as_ptr(),
                    gd[bi * m * n..].as_ptr(),
                    d[bi * k * n..].as_mut_ptr(),
                );
                // SAFETY: as above.
                unsafe {
                    if trans_b {
                        // dB [n×k] = dCᵀ · A
                        matrixmultiply::dgemm(n, m, k, 1.0, gp, 1, n as isize, ap, k as isize, 1, 0.0, dp, k as isize, 1);
                    } else {
                        // dB [k×n] = Aᵀ · dC
                        matrixmultiply::dgemm(k, m, n, 1.0, ap, 1, k as isize, gp, n as isize, 1, 0.0, dp, n as isize, 1);
                    }
                }
            }
            acc(b, Tensor::from_parts(vb.shape().to_vec(), d));
        }
    }

    fn conv1d_backward(
        &self,
        ix: usize,
        ik: usize,
        stride: usize,
        padding: usize,
        g: &Tensor,
        acc: &mut impl FnMut(usize, Tensor),
    ) {
        let (vx, vk) = (self.val(ix), self.val(ik));
        let (&[n, c, l], &[o, _, k]) = (vx.shape(), vk.shape()) else {
            unreachable!("conv operands validated in forward")
        };
        let lo = g.shape()[2];
        let (xd, wd, gd) = (vx.data(), vk.data(), g.data());
        let ck = c * k;
        let mut grows = vec![0.0; n * lo * o];
        for ni in 0..n {
            for oi in 0..o {
                for t in 0..lo {
                    grows[(ni * lo + t) * o + oi] = gd[(ni * o + oi) * lo + t];
                }
            }
        }
        let cols = im2col(xd, [n, c, l], k, stride, padding, lo);
        let mut dw = vec![0.0; vk.len()];
        gemm(o, n * lo, ck, &grows, (1, o), &cols, (ck, 1), &mut dw);
        let mut dcols = vec![0.0; n * lo * ck];
        gemm(n * lo, o, ck, &grows, (o, 1), wd, (ck, 1), &mut dcols);
        let mut dx = vec![0.0; vx.len()];
        for ni in 0..n {
            for t in 0..lo {
                let row = &dcols[(ni * lo + t) * ck..(ni * lo + t + 1) * ck];
                let base = (t * stride) as isize - padding as isize;
                for ci in 0..c {
                    for kk in 0..k {
                        let pos = base + kk as isize;
                        if pos >= 0 && (pos as usize) < l {
                            dx[(ni * c + ci) * l + pos as usize] += row[ci * k + kk];
                        }
                    }
                }
            }
        }
        acc(ix, Tensor::from_parts(vx.shape().to_vec(), dx));
        acc(ik, Tensor::from_parts(vk.shape().to_vec(), dw));
    }

    fn conv_transpose1d_backward(
        &self,
        ix: usize,
        ik: usize,
        stride: usize,
        g: &Tensor,
        acc: &mut impl FnMut(usize, Tensor),
    ) {
        let (vx, vk) = (self.val(ix), self.val(ik));
        let (&[n, c, l], &[_, o, k]) = (vx.shape(), vk.shape()) else {
            unreachable!("conv operands validated in forward")
        };
        let lo = g.shape()[2];
        let (xd, wd, gd) = (vx.data(), vk.data(), g.data());
        let ok = o * k;
        let mut gtaps = vec![0.0; n * l * ok];
        for ni in 0..n {
            for li in 0..l {
                let row = &mut gtaps[(ni * l + li) * ok..(ni * l + li + 1) * ok];
                for oi in 0..o {
                    let src = &gd[(ni * o + oi) * lo + li * stride..(ni * o + oi) * lo + li * stride + k];
                    row[oi * k..(oi + 1) * k].copy_from_slice(src);
                }
            }
        }
        let xt = channels_last(xd, [n, c, l]);
        let mut dw = vec![0.0; vk.len()];
        gemm(c, n * l, ok, &xt, (1, c), &gtaps, (ok, 1), &mut dw);
        let mut dxt = vec![0.0; n * l * c];
        gemm(n * l, ok, c, &gtaps, (ok, 1), wd, (1, ok), &mut dxt);
        let mut dx = vec![0.0; vx.len()];
        for ni in 0..n {
            for ci in 0..c {
                for li in 0..l {
                    dx[(ni * c + ci) * l + li] = dxt[(ni * l + li) * c + ci];
                }
            }
        }
        acc(ix, Tensor::from_parts(vx.shape().to_vec(), dx));
        acc(ik, Tensor::from_parts(vk.shape().to_vec(), dw));
    }
}
