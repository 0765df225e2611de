use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corridor::{Approach, Phase};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Vehicle generated at an external detector point.
    Enter,
    /// Vehicle crosses the detector upstream of `intersection`.
    Detect,
    /// Vehicle reaches the stopline and joins a queue.
    Arrive,
    /// Vehicle discharges across the stopline.
    Depart,
    /// Vehicle leaves the modeled network.
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Enter => "enter",
            Self::Detect => "detect",
            Self::Arrive => "arrive",
            Self::Depart => "depart",
            Self::Exit => "exit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub intersection: usize,
    pub phase: Option<Phase>,
    pub vehicle: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoplineVisit {
    pub intersection: usize,
    pub phase: Phase,
    pub arrival_s: f64,
    pub departure_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u32,
    pub origin_intersection: usize,
    pub origin: Approach,
    pub entry_s: f64,
    pub visits: Vec<StoplineVisit>,
    pub exit_s: Option<f64>,
    /// Entered at one corridor end and left across the other end's stopline.
    pub corridor_through: bool,
}

impl VehicleRecord {
    pub fn corridor_travel_time_s(&self) -> Option<f64> {
        if !self.corridor_through {
            return None;
        }
        let first = self.visits.first()?;
        let last = self.visits.last()?;
        Some(last.departure_s - first.departure_s)
    }
}

/// CSV with columns `time_s,event_kind,intersection,movement,vehicle_id`.
pub fn write_event_log_csv(path: &Path, events: &[Event]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "time_s,event_kind,intersection,movement,vehicle_id").map_err(io)?;
    for ev in events {
        let movement = ev.phase.map(|p| p.label()).unwrap_or_default();
        writeln!(
            out,
            "{:.3},{},{},{},{}",
            ev.time_s,
            ev.kind.as_str(),
            ev.intersection,
            movement,
            ev.vehicle
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
