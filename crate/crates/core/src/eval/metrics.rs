use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True entries with magnitude below this are skipped by [`mape`].
pub const MAPE_ZERO_TOLERANCE: f64 = 1e-9;

fn check_pair(metric: &'static str, t: &[f64], p: &[f64]) -> Result<()> {
    if t.len() != p.len() {
        return Err(Error::invalid(metric, format!("series lengths differ ({} vs {})", t.len(), p.len())));
    }
    if t.is_empty() {
        return Err(Error::UndefinedMetric {
            metric,
            reason: "empty series",
        });
    }
    Ok(())
}

/// Mean absolute percentage error as a fraction.
pub fn mape(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("mape", t, p)?;
    let (sum, n) = t
        .iter()
        .zip(p)
        .filter(|(a, _)| a.abs() >= MAPE_ZERO_TOLERANCE)
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + ((a - b) / a).abs(), n + 1));
    if n == 0 {
        return Err(Error::UndefinedMetric {
            metric: "mape",
            reason: "every true value is zero",
        });
    }
    Ok(sum / n as f64)
}

pub fn mae(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("mae", t, p)?;
    Ok(t.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64)
}

pub fn mse(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("mse", t, p)?;
    Ok(t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64)
}

pub fn rmse(t: &[f64], p: &[f64]) -> Result<f64> {
    mse(t, p).map(f64::sqrt)
}

/// RMSE over the range of the true series.
pub fn nrmse(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("nrmse", t, p)?;
    let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(Error::UndefinedMetric {
            metric: "nrmse",
            reason: "true series is constant",
        });
    }
    Ok(rmse(t, p)? / (hi - lo))
}

/// Scales a non-negative series to unit sum; `None` when it sums to zero.
fn distribution(metric: &'static str, v: &[f64]) -> Result<Option<Vec<f64>>> {
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::invalid(metric, format!("entries must be non-negative, found {x}")));
    }
    let total: f64 = v.iter().sum();
    Ok((total > 0.0).then(|| v.iter().map(|x| x / total).collect()))
}

/// Hellinger distance between the two series normalized to unit sum.
/// Two all-zero series are at distance 0.
pub fn hellinger(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("hellinger", t, p)?;
    match (distribution("hellinger", t)?, distribution("hellinger", p)?) {
        (None, None) => Ok(0.0),
        (Some(a), Some(b)) => {
            let s: f64 = a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
            Ok((s.sqrt() / std::f64::consts::SQRT_2).min(1.0))
        }
        _ => Err(Error::UndefinedMetric {
            metric: "hellinger",
            reason: "exactly one series sums to zero",
        }),
    }
}

/// Earth mover's distance on index support, divided by `n - 1` so that
/// moving all mass end to end costs 1.
pub fn emd(t: &[f64], p: &[f64]) -> Result<f64> {
    check_pair("emd", t, p)?;
    if t.len() < 2 {
        return Err(Error::UndefinedMetric {
            metric: "emd",
            reason: "needs at least two bins",
        });
    }
    match (distribution("emd", t)?, distribution("emd", p)?) {
        (None, None) => Ok(0.0),
        (Some(a), Some(b)) => {
            let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(&b).take(a.len() - 1) {
                ca += x;
                cb += y;
                total += (ca - cb).abs();
            }
            Ok(total / (a.len() - 1) as f64)
        }
        _ => Err(Error::UndefinedMetric {
            metric: "emd",
            reason: "exactly one series sums to zero",
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mape,
    Emd,
    Hld,
    Nrmse,
    Mae,
    Mse,
    Rmse,
}

impl Metric {
    pub const ALL: [Metric; 7] = [Self::Mape, Self::Emd, Self::Hld, Self::Nrmse, Self::Mae, Self::Mse, Self::Rmse];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mape => "mape",
            Self::Emd => "emd",
            Self::Hld => "hld",
            Self::Nrmse => "nrmse",
            Self::Mae => "mae",
            Self::Mse => "mse",
            Self::Rmse => "rmse",
        }
    }

    pub fn compute(self, t: &[f64], p: &[f64]) -> Result<f64> {
        match self {
            Self::Mape => mape(t, p),
            Self::Emd => emd(t, p),
            Self::Hld => hellinger(t, p),
            Self::Nrmse => nrmse(t, p),
            Self::Mae => mae(t, p),
            Self::Mse => mse(t, p),
            Self::Rmse => rmse(t, p),
        }
    }
}

/// One value per metric; `None` where not computed or undefined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSuite {
    pub mape: Option<f64>,
    pub emd: Option<f64>,
    pub hld: Option<f64>,
    pub nrmse: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
}

impl MetricSuite {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Mape => self.mape,
            Metric::Emd => self.emd,
            Metric::Hld => self.hld,
            Metric::Nrmse => self.nrmse,
            Metric::Mae => self.mae,
            Metric::Mse => self.mse,
            Metric::Rmse => self.rmse,
        }
    }

    pub fn set(&mut self, m: Metric, v: Option<f64>) {
        *match m {
            Metric::Mape => &mut self.mape,
            Metric::Emd => &mut self.emd,
            Metric::Hld => &mut self.hld,
            Metric::Nrmse => &mut self.nrmse,
            Metric::Mae => &mut self.mae,
            Metric::Mse => &mut self.mse,
            Metric::Rmse => &mut self.rmse,
        } = v;
    }
}
