//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the reverse-mode rules it verifies.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all checked entries.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

impl GradCheckReport {
    fn from_pairs(analytic: &[f64], numeric: &[f64]) -> Self {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let relative_error = if denom == 0.0 { 0.0 } else { diff / denom };
        let max_abs_error = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Self {
            relative_error,
            max_abs_error,
            entries: analytic.len(),
        }
    }
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Checks d(f)/d(inputs) for a scalar-valued `f`.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    check_with_params(&mut store, inputs, |tape, _, vars| f(tape, vars), step)
}

/// Checks gradients with respect to both `inputs` and every parameter of
/// `store`.
pub fn check_with_params<F>(store: &mut ParamStore, inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    check_params_where(store, inputs, f, step, |_| true)
}

/// Like [`check_with_params`] but only over parameters whose name passes
/// `select`; the others stay fixed.
pub fn check_params_where<F, S>(store: &mut ParamStore, inputs: &[Tensor], f: F, step: f64, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
    S: Fn(&str) -> bool,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, store, &vars)?;
        scalar_of(&tape, out)
    };

    let mut analytic = Vec::new();
    {
        store.zero_grad();
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, store, &vars)?;
        tape.backward(out)?;
        for (v, t) in vars.iter().zip(inputs) {
            match tape.grad(*v) {
                Some(g) => analytic.extend_from_slice(g.data()),
                None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        tape.accumulate_param_grads(store);
        for p in store.iter().filter(|p| select(&p.name)) {
            match &p.grad {
                Some(g) => analytic.extend_from_slice(g.data()),
                None => analytic.extend(std::iter::repeat_n(0.0, p.value.len())),
            }
        }
        store.zero_grad();
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(store, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(store, &work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    let ids: Vec<_> = (0..store.len())
        .map(super::params::ParamId)
        .filter(|&id| select(&store.get(id).name))
        .collect();
    for id in ids {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + step;
            let plus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[j] = orig - step;
            let minus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(GradCheckReport::from_pairs(&analytic, &numeric))
}
