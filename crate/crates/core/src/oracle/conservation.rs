use std::collections::BTreeMap;

use super::events::{Event, EventKind, VehicleRecord};
use crate::corridor::Approach;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Balance {
    pub entered: usize,
    pub exited: usize,
    pub in_network: usize,
}

impl Balance {
    pub fn holds(&self) -> bool {
        self.entered == self.exited + self.in_network
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConservationReport {
    /// Keyed by origin approach, e.g. `EB@0`.
    pub per_approach: BTreeMap<String, Balance>,
    pub total: Balance,
    /// Departures per movement, e.g. `3:P2`.
    pub per_movement: BTreeMap<String, usize>,
    pub violations: Vec<String>,
}

impl ConservationReport {
    pub fn is_balanced(&self) -> bool {
        self.violations.is_empty()
    }
}

fn origin_key(intersection: usize, approach: Approach) -> String {
    format!("{}@{intersection}", approach.short_name())
}

/// Checks entered == exited + in-network, per origin approach and in
/// total, counting entries and exits from the log and residents from the
/// vehicle records.
pub fn verify_conservation(events: &[Event], vehicles: &[VehicleRecord]) -> ConservationReport {
    let mut report = ConservationReport::default();
    let origin = |id: u32| vehicles.get(id as usize).map(|v| origin_key(v.origin_intersection, v.origin));
    for ev in events {
        match ev.kind {
            EventKind::Enter | EventKind::Exit => {
                let key = origin(ev.vehicle).unwrap_or_else(|| format!("unknown vehicle {}", ev.vehicle));
                let b = report.per_approach.entry(key).or_default();
                if ev.kind == EventKind::Enter {
                    b.entered += 1;
                    report.total.entered += 1;
                } else {
                    b.exited += 1;
                    report.total.exited += 1;
                }
            }
            EventKind::Depart => {
                let movement = ev.phase.map(|p| p.label()).unwrap_or_default();
                *report.per_movement.entry(format!("{}:{movement}", ev.intersection)).or_default() += 1;
            }
            _ => {}
        }
    }
    for v in vehicles.iter().filter(|v| v.exit_s.is_none()) {
        report.per_approach.entry(origin_key(v.origin_intersection, v.origin)).or_default().in_network += 1;
        report.total.in_network += 1;
    }
    for (key, b) in &report.per_approach {
        if !b.holds() {
            report.violations.push(format!(
                "approach {key}: entered {} != exited {} + in network {}",
                b.entered, b.exited, b.in_network
            ));
        }
    }
    if !report.total.holds() {
        let t = &report.total;
        report.violations.push(format!(
            "total: entered {} != exited {} + in network {}",
            t.entered, t.exited, t.in_network
        ));
    }
    report
}
