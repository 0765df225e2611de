use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Count,
    Max,
    /// Empty intervals report 0.
    Mean,
}

/// Buckets `(time_s, value)` events into `w` windows of `interval_s`
/// starting at `start_s`. A time on a boundary belongs to the later window.
pub fn aggregate_to_intervals(
    events: &[(f64, f64)],
    start_s: f64,
    interval_s: f64,
    w: usize,
    how: Aggregation,
) -> Result<Vec<f64>> {
    if !(interval_s > 0.0) {
        return Err(Error::invalid("aggregate_to_intervals", "interval length must be positive"));
    }
    let mut acc = vec![0.0; w];
    let mut n = vec![0usize; w];
    for &(t, v) in events {
        let slot = ((t - start_s) / interval_s).floor();
        if !(slot >= 0.0 && slot < w as f64) {
            return Err(Error::invalid(
                "aggregate_to_intervals",
                format!("event at {t} s lies outside [{start_s}, {})", start_s + w as f64 * interval_s),
            ));
        }
        let slot = slot as usize;
        match how {
            Aggregation::Count => acc[slot] += 1.0,
            Aggregation::Max => acc[slot] = if n[slot] == 0 { v } else { acc[slot].max(v) },
            Aggregation::Mean => acc[slot] += v,
        }
        n[slot] += 1;
    }
    if how == Aggregation::Mean {
        for (a, &c) in acc.iter_mut().zip(&n) {
            if c > 0 {
                *a /= c as f64;
            }
        }
    }
    Ok(acc)
}
