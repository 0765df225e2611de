use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    Poisson,
    /// Fluid arrivals: a vehicle is released each time the accumulated
    /// expected count crosses an integer.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub time_step_s: f64,
    pub warmup_s: f64,
    /// Extra time after the horizon, without new arrivals, for vehicles
    /// still in the network to finish.
    pub drain_cap_s: f64,
    pub arrivals: ArrivalMode,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            time_step_s: 1.0,
            warmup_s: 600.0,
            drain_cap_s: 14_400.0,
            arrivals: ArrivalMode::Poisson,
            record_events: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, interval_s: f64) -> Result<()> {
        if !(self.time_step_s > 0.0) || !(self.warmup_s >= 0.0) || !(self.drain_cap_s >= 0.0) {
            return Err(Error::invalid("sim", "time step must be positive, warm-up and drain non-negative"));
        }
        let ratio = interval_s / self.time_step_s;
        let warm = self.warmup_s / self.time_step_s;
        if (ratio - ratio.round()).abs() > 1e-9 || (warm - warm.round()).abs() > 1e-9 {
            return Err(Error::invalid(
                "sim.time_step_s",
                format!("{} s does not divide the {interval_s} s interval and the warm-up", self.time_step_s),
            ));
        }
        Ok(())
    }

    pub fn horizon_s(&self, w: usize, interval_s: f64) -> f64 {
        self.warmup_s + w as f64 * interval_s
    }
}
