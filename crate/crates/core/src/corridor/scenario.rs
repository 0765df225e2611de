use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_PHASES: usize = 8;
pub const NUM_PHASE_GROUPS: usize = 4;
pub const LOST_TIME_PER_PHASE_S: f64 = 4.0;

/// Direction of travel on an approach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Eastbound,
    Westbound,
    Northbound,
    Southbound,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Self::Eastbound, Self::Westbound, Self::Northbound, Self::Southbound];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_major(self) -> bool {
        matches!(self, Self::Eastbound | Self::Westbound)
    }

    /// Lane group serving through and right-turning vehicles.
    pub fn through_phase(self) -> Phase {
        match self {
            Self::Eastbound => Phase::MajorThroughEb,
            Self::Westbound => Phase::MajorThroughWb,
            Self::Northbound => Phase::MinorThroughNb,
            Self::Southbound => Phase::MinorThroughSb,
        }
    }

    pub fn left_phase(self) -> Phase {
        match self {
            Self::Eastbound => Phase::MajorLeftEb,
            Self::Westbound => Phase::MajorLeftWb,
            Self::Northbound => Phase::MinorLeftNb,
            Self::Southbound => Phase::MinorLeftSb,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Eastbound => "EB",
            Self::Westbound => "WB",
            Self::Northbound => "NB",
            Self::Southbound => "SB",
        }
    }
}

/// The eight lane groups, in column order of every `[k×p]` array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    MajorThroughEb,
    MajorThroughWb,
    MajorLeftEb,
    MajorLeftWb,
    MinorThroughNb,
    MinorThroughSb,
    MinorLeftNb,
    MinorLeftSb,
}

impl Phase {
    pub const ALL: [Phase; NUM_PHASES] = [
        Self::MajorThroughEb,
        Self::MajorThroughWb,
        Self::MajorLeftEb,
        Self::MajorLeftWb,
        Self::MinorThroughNb,
        Self::MinorThroughSb,
        Self::MinorLeftNb,
        Self::MinorLeftSb,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Self::ALL.get(i).copied()
    }

    pub fn group(self) -> PhaseGroup {
        match self {
            Self::MajorThroughEb | Self::MajorThroughWb => PhaseGroup::MajorThrough,
            Self::MajorLeftEb | Self::MajorLeftWb => PhaseGroup::MajorLeft,
            Self::MinorThroughNb | Self::MinorThroughSb => PhaseGroup::MinorThrough,
            Self::MinorLeftNb | Self::MinorLeftSb => PhaseGroup::MinorLeft,
        }
    }

    pub fn approach(self) -> Approach {
        match self {
            Self::MajorThroughEb | Self::MajorLeftEb => Approach::Eastbound,
            Self::MajorThroughWb | Self::MajorLeftWb => Approach::Westbound,
            Self::MinorThroughNb | Self::MinorLeftNb => Approach::Northbound,
            Self::MinorThroughSb | Self::MinorLeftSb => Approach::Southbound,
        }
    }

    pub fn is_major(self) -> bool {
        self.approach().is_major()
    }

    pub fn is_left(self) -> bool {
        matches!(self.group(), PhaseGroup::MajorLeft | PhaseGroup::MinorLeft)
    }

    pub fn label(self) -> String {
        format!("P{}", self.index() + 1)
    }
}

/// Phases sharing one green indication, in max-green column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseGroup {
    MajorThrough,
    MajorLeft,
    MinorThrough,
    MinorLeft,
}

impl PhaseGroup {
    pub const ALL: [PhaseGroup; NUM_PHASE_GROUPS] =
        [Self::MajorThrough, Self::MajorLeft, Self::MinorThrough, Self::MinorLeft];
    /// Order in which groups receive green within a cycle.
    pub const SEQUENCE: [PhaseGroup; NUM_PHASE_GROUPS] =
        [Self::MajorLeft, Self::MajorThrough, Self::MinorLeft, Self::MinorThrough];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorGeometry {
    pub k: usize,
    /// One entry per adjacent intersection pair, west to east.
    pub link_length_m: Vec<f64>,
    pub lanes_per_movement: u32,
    pub detector_setback_m: f64,
}

impl CorridorGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("geometry.k", format!("need at least 2 intersections, got {}", self.k)));
        }
        if self.link_length_m.len() != self.k - 1 {
            return Err(Error::invalid(
                "geometry.link_length_m",
                format!("{} lengths for {} intersections", self.link_length_m.len(), self.k),
            ));
        }
        if self.lanes_per_movement == 0 {
            return Err(Error::invalid("geometry.lanes_per_movement", "must be positive"));
        }
        if !(self.detector_setback_m > 0.0) {
            return Err(Error::invalid("geometry.detector_setback_m", "must be positive"));
        }
        for (i, &l) in self.link_length_m.iter().enumerate() {
            if !(l > 0.0) || l < self.detector_setback_m {
                return Err(Error::invalid(
                    "geometry.link_length_m",
                    format!("link {i} is {l} m, shorter than the {} m detector setback", self.detector_setback_m),
                ));
            }
        }
        Ok(())
    }

    pub fn lanes(&self, phase: Phase) -> u32 {
        if phase.is_left() {
            1
        } else {
            self.lanes_per_movement
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionTiming {
    pub cycle_length_s: f64,
    pub offset_s: f64,
    /// Indexed by [`PhaseGroup::index`]; net of lost time.
    pub max_green_fraction: [f64; NUM_PHASE_GROUPS],
}

/// Green window of one phase group, in seconds into the cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenWindow {
    pub group: PhaseGroup,
    pub start_s: f64,
    pub end_s: f64,
}

impl IntersectionTiming {
    pub fn served_groups(&self) -> usize {
        self.max_green_fraction.iter().filter(|&&f| f > 0.0).count()
    }

    pub fn lost_time_s(&self) -> f64 {
        match self.served_groups() {
            0 | 1 => 0.0,
            n => n as f64 * LOST_TIME_PER_PHASE_S,
        }
    }

    pub fn validate(&self, i: usize) -> Result<()> {
        let what = || format!("signals[{i}]");
        if !(self.cycle_length_s > 0.0) {
            return Err(Error::invalid(what(), "cycle length must be positive"));
        }
        if !(0.0..self.cycle_length_s).contains(&self.offset_s) {
            return Err(Error::invalid(what(), format!("offset {} outside [0, cycle)", self.offset_s)));
        }
        if self.max_green_fraction.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid(what(), "green fractions must lie in [0, 1]"));
        }
        if self.served_groups() == 0 {
            return Err(Error::invalid(what(), "no phase group receives green"));
        }
        let used = self.max_green_fraction.iter().sum::<f64>() * self.cycle_length_s + self.lost_time_s();
        if used > self.cycle_length_s + 1e-9 {
            return Err(Error::invalid(
                what(),
                format!("green plus lost time is {used:.1} s in a {:.1} s cycle", self.cycle_length_s),
            ));
        }
        Ok(())
    }

    /// Lost time precedes each served group's green.
    pub fn green_windows(&self) -> Vec<GreenWindow> {
        let lost = if self.served_groups() > 1 { LOST_TIME_PER_PHASE_S } else { 0.0 };
        let mut t = 0.0;
        let mut out = Vec::new();
        for group in PhaseGroup::SEQUENCE {
            let f = self.max_green_fraction[group.index()];
            if f <= 0.0 {
                continue;
            }
            t += lost;
            let g = f * self.cycle_length_s;
            out.push(GreenWindow {
                group,
                start_s: t,
                end_s: t + g,
            });
            t += g;
        }
        out
    }

    /// Seconds into the current cycle at absolute time `t`.
    pub fn cycle_position(&self, t: f64) -> f64 {
        (t - self.offset_s).rem_euclid(self.cycle_length_s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub intersections: Vec<IntersectionTiming>,
}

impl SignalPlan {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.intersections.len() != k {
            return Err(Error::invalid(
                "signals",
                format!("{} timings for {k} intersections", self.intersections.len()),
            ));
        }
        self.intersections.iter().enumerate().try_for_each(|(i, t)| t.validate(i))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingBehavior {
    pub free_flow_speed_mps: f64,
    pub saturation_headway_s: f64,
    pub startup_lost_time_s: f64,
    pub speed_factor: f64,
}

impl DrivingBehavior {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("free_flow_speed_mps", self.free_flow_speed_mps),
            ("saturation_headway_s", self.saturation_headway_s),
            ("startup_lost_time_s", self.startup_lost_time_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("behavior.{name}"), format!("must be positive, got {v}")));
            }
        }
        if !(0.8..=1.2).contains(&self.speed_factor) {
            return Err(Error::invalid(
                "behavior.speed_factor",
                format!("{} outside [0.8, 1.2]", self.speed_factor),
            ));
        }
        Ok(())
    }

    pub fn travel_speed_mps(&self) -> f64 {
        self.free_flow_speed_mps * self.speed_factor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnSplit {
    pub left: f64,
    pub through: f64,
    pub right: f64,
}

impl TurnSplit {
    pub fn new(left: f64, right: f64) -> Self {
        Self {
            left,
            through: 1.0 - left - right,
            right,
        }
    }
}

/// Per intersection, per approach (indexed by [`Approach::index`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurningRatios {
    pub intersections: Vec<[TurnSplit; 4]>,
}

impl TurningRatios {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.intersections.len() != k {
            return Err(Error::invalid("ratios", format!("{} entries for {k} intersections", self.intersections.len())));
        }
        for (i, splits) in self.intersections.iter().enumerate() {
            for (a, s) in Approach::ALL.iter().zip(splits) {
                let parts = [s.left, s.through, s.right];
                if parts.iter().any(|&x| !(x >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        format!("ratios[{i}].{}", a.short_name()),
                        format!("({}, {}, {}) is not a distribution", s.left, s.through, s.right),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, intersection: usize, approach: Approach) -> TurnSplit {
        self.intersections[intersection][approach.index()]
    }
}

/// Arrival-rate profile of one external approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSource {
    pub intersection: usize,
    pub approach: Approach,
    /// veh/h per measured interval; the warm-up uses the first entry.
    pub rates_vph: Vec<f64>,
}

impl DemandSource {
    pub fn mean_rate_vph(&self) -> f64 {
        self.rates_vph.iter().sum::<f64>() / self.rates_vph.len().max(1) as f64
    }
}

/// External approaches: eastbound at the west end, westbound at the east
/// end, and both minor approaches at every intersection.
pub fn external_approaches(k: usize) -> Vec<(usize, Approach)> {
    let mut out = vec![(0, Approach::Eastbound), (k - 1, Approach::Westbound)];
    for i in 0..k {
        out.push((i, Approach::Northbound));
        out.push((i, Approach::Southbound));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub w: usize,
    pub interval_s: f64,
    pub geometry: CorridorGeometry,
    pub signals: SignalPlan,
    pub behavior: DrivingBehavior,
    pub ratios: TurningRatios,
    /// One source per entry of [`external_approaches`], same order.
    pub demand: Vec<DemandSource>,
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.geometry.k
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let k = self.k();
        self.signals.validate(k)?;
        self.behavior.validate()?;
        self.ratios.validate(k)?;
        if self.w == 0 || !(self.interval_s > 0.0) {
            return Err(Error::invalid("scenario", "need at least one interval of positive length"));
        }
        let expected = external_approaches(k);
        if self.demand.len() != expected.len() {
            return Err(Error::invalid(
                "demand",
                format!("{} sources, expected {}", self.demand.len(), expected.len()),
            ));
        }
        for (src, &(i, a)) in self.demand.iter().zip(&expected) {
            if (src.intersection, src.approach) != (i, a) {
                return Err(Error::invalid(
                    "demand",
                    format!("source at {}{} out of canonical order", src.approach.short_name(), src.intersection),
                ));
            }
            if src.rates_vph.len() != self.w || src.rates_vph.iter().any(|&r| !(r >= 0.0)) {
                return Err(Error::invalid(
                    format!("demand.{}{}", a.short_name(), i),
                    format!("need {} non-negative rates", self.w),
                ));
            }
        }
        Ok(())
    }

    /// Free-flow time between the first and last stopline.
    pub fn free_flow_travel_time_s(&self) -> f64 {
        self.geometry.link_length_m.iter().sum::<f64>() / self.behavior.travel_speed_mps()
    }

    pub fn demand_at(&self, intersection: usize, approach: Approach) -> Option<&DemandSource> {
        self.demand
            .iter()
            .find(|d| d.intersection == intersection && d.approach == approach)
    }

    /// Major-through max-green fraction averaged over intersections.
    pub fn major_through_green_fraction(&self) -> f64 {
        let t = &self.signals.intersections;
        t.iter().map(|x| x.max_green_fraction[PhaseGroup::MajorThrough.index()]).sum::<f64>() / t.len() as f64
    }

    pub fn mean_cycle_length_s(&self) -> f64 {
        let t = &self.signals.intersections;
        t.iter().map(|x| x.cycle_length_s).sum::<f64>() / t.len() as f64
    }
}
