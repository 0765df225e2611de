use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("adam config", format!("{self:?}")))
        }
    }
}

/// Adam with bias correction over the parameters of one store, or over the
/// subset whose names start with given prefixes.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step_count: u64,
    store_len: usize,
    tracked: Vec<usize>,
    names: Vec<String>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        Self::for_prefixes(config, store, &[""])
    }

    /// Tracks only parameters whose name starts with one of `prefixes`;
    /// the others are never modified.
    pub fn for_prefixes(config: AdamConfig, store: &ParamStore, prefixes: &[&str]) -> Result<Self> {
        config.validate()?;
        let tracked: Vec<usize> = store
            .iter()
            .enumerate()
            .filter(|(_, p)| prefixes.iter().any(|pre| p.name.starts_with(pre)))
            .map(|(i, _)| i)
            .collect();
        if tracked.is_empty() && !store.is_empty() {
            return Err(Error::invalid("adam", format!("no parameter matches {prefixes:?}")));
        }
        let moments: Vec<Tensor> = tracked
            .iter()
            .map(|&i| Tensor::zeros(store.value(ParamId(i)).shape()))
            .collect();
        Ok(Self {
            config,
            step_count: 0,
            store_len: store.len(),
            names: tracked.iter().map(|&i| store.get(ParamId(i)).name.clone()).collect(),
            tracked,
            first_moment: moments.clone(),
            second_moment: moments,
        })
    }

    pub fn num_tracked(&self) -> usize {
        self.tracked.len()
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the accumulated gradients of the tracked
    /// parameters, then clears every gradient in the store.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.store_len {
            return Err(Error::invalid(
                "adam step",
                format!("optimizer was built for {} parameters, store has {}", self.store_len, store.len()),
            ));
        }
        for ((&i, name), m) in self.tracked.iter().zip(&self.names).zip(&self.first_moment) {
            let p = store.get(ParamId(i));
            if &p.name != name || p.value.shape() != m.shape() {
                return Err(Error::invalid(
                    "adam step",
                    format!("parameter `{}` does not match tracked `{name}`", p.name),
                ));
            }
            if p.grad.is_none() {
                return Err(Error::MissingGradient(p.name.clone()));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((&i, m), v) in self
            .tracked
            .iter()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            let p = store.get_mut(ParamId(i));
            let grad = p.grad.take().expect("checked above");
            for (((theta, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
