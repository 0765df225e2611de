use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corridor::{
    external_approaches, Approach, CorridorGeometry, Phase, DemandSource, DrivingBehavior, IntersectionTiming, PhaseGroup,
    Scenario, SignalPlan, TurnSplit, TurningRatios, LOST_TIME_PER_PHASE_S, NUM_PHASE_GROUPS,
};
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
pub type Range = [f64; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingRanges {
    pub k: usize,
    pub w: usize,
    pub interval_s: f64,
    pub lanes_per_movement: u32,
    pub detector_setback_m: f64,
    pub link_length_m: Range,
    pub cycle_length_s: Range,
    pub major_through_green: Range,
    /// Per-intersection deviation around the scenario's major-through share.
    pub green_jitter: f64,
    pub free_flow_speed_mps: Range,
    pub saturation_headway_s: Range,
    pub startup_lost_time_s: Range,
    pub speed_factor: Range,
    pub major_left_ratio: Range,
    pub major_right_ratio: Range,
    pub minor_turn_ratio: Range,
    /// Arterial entry demand as a fraction of the corridor's bottleneck
    /// through capacity, before clamping to `arterial_demand_vph`.
    pub arterial_vc: Range,
    /// Minor-street demand as a fraction of the approach's capacity.
    pub minor_vc: Range,
    pub arterial_demand_vph: Range,
    pub minor_demand_vph: Range,
    /// Bounds every per-interval rate after the temporal profile.
    pub demand_clamp_vph: Range,
    /// Largest relative swing of the scenario's temporal profile.
    pub profile_amplitude: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            k: 8,
            w: 10,
            interval_s: 300.0,
            lanes_per_movement: 2,
            detector_setback_m: 500.0,
            link_length_m: [600.0, 1500.0],
            cycle_length_s: [120.0, 240.0],
            major_through_green: [0.15, 0.6],
            green_jitter: 0.03,
            free_flow_speed_mps: [13.4, 17.9],
            saturation_headway_s: [1.8, 2.4],
            startup_lost_time_s: [1.5, 3.0],
            speed_factor: [0.8, 1.2],
            major_left_ratio: [0.0, 0.03],
            major_right_ratio: [0.0, 0.03],
            minor_turn_ratio: [0.1, 0.3],
            arterial_vc: [0.3, 0.9],
            minor_vc: [0.2, 0.8],
            arterial_demand_vph: [200.0, 1200.0],
            minor_demand_vph: [50.0, 600.0],
            demand_clamp_vph: [50.0, 1200.0],
            profile_amplitude: 0.4,
        }
    }
}

impl SamplingRanges {
    fn named_ranges(&self) -> [(&'static str, Range); 16] {
        [
            ("link_length_m", self.link_length_m),
            ("cycle_length_s", self.cycle_length_s),
            ("major_through_green", self.major_through_green),
            ("free_flow_speed_mps", self.free_flow_speed_mps),
            ("saturation_headway_s", self.saturation_headway_s),
            ("startup_lost_time_s", self.startup_lost_time_s),
            ("speed_factor", self.speed_factor),
            ("major_left_ratio", self.major_left_ratio),
            ("major_right_ratio", self.major_right_ratio),
            ("minor_turn_ratio", self.minor_turn_ratio),
            ("arterial_vc", self.arterial_vc),
            ("minor_vc", self.minor_vc),
            ("arterial_demand_vph", self.arterial_demand_vph),
            ("minor_demand_vph", self.minor_demand_vph),
            ("demand_clamp_vph", self.demand_clamp_vph),
            ("green_jitter", [0.0, self.green_jitter]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.named_ranges() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("ranges.{name}"), format!("empty range [{lo}, {hi}]")));
            }
        }
        if self.k < 2 || self.w == 0 || !(self.interval_s > 0.0) {
            return Err(Error::invalid("ranges", "need k >= 2, w >= 1 and a positive interval"));
        }
        if self.link_length_m[0] < self.detector_setback_m {
            return Err(Error::invalid("ranges.link_length_m", "links must be at least the detector setback"));
        }
        if self.major_left_ratio[1] + self.major_right_ratio[1] > 1.0 || 2.0 * self.minor_turn_ratio[1] > 1.0 {
            return Err(Error::invalid("ranges", "turning ratios leave no through movement"));
        }
        let lost = NUM_PHASE_GROUPS as f64 * LOST_TIME_PER_PHASE_S / self.cycle_length_s[0];
        if self.major_through_green[1] + self.green_jitter + lost >= 1.0 || !(self.cycle_length_s[0] > 0.0) {
            return Err(Error::invalid("ranges.major_through_green", "leaves no green for the other phases"));
        }
        if !(0.0..1.0).contains(&self.profile_amplitude) {
            return Err(Error::invalid("ranges.profile_amplitude", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: Range) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Scenario drawn deterministically from `seed`. One cycle length is shared
/// by all intersections so they can coordinate through offsets.
pub fn sample_scenario(seed: u64, ranges: &SamplingRanges) -> Result<Scenario> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ranges.k;
    let geometry = CorridorGeometry {
        k,
        link_length_m: (0..k - 1).map(|_| draw(&mut rng, ranges.link_length_m).round()).collect(),
        lanes_per_movement: ranges.lanes_per_movement,
        detector_setback_m: ranges.detector_setback_m,
    };
    let cycle = draw(&mut rng, ranges.cycle_length_s).round();
    let base_green = draw(&mut rng, ranges.major_through_green);
    let lost = NUM_PHASE_GROUPS as f64 * LOST_TIME_PER_PHASE_S / cycle;
    let intersections: Vec<IntersectionTiming> = (0..k)
        .map(|_| {
            let jitter = draw(&mut rng, [-ranges.green_jitter, ranges.green_jitter]);
            let major = (base_green + jitter).clamp(ranges.major_through_green[0], ranges.major_through_green[1]);
            let rest = 1.0 - major - lost;
            let weights = [draw(&mut rng, [0.1, 0.3]), draw(&mut rng, [0.4, 0.8]), draw(&mut rng, [0.1, 0.3])];
            let total: f64 = weights.iter().sum();
            let mut f = [0.0; NUM_PHASE_GROUPS];
            f[PhaseGroup::MajorThrough.index()] = major;
            f[PhaseGroup::MajorLeft.index()] = rest * weights[0] / total;
            f[PhaseGroup::MinorThrough.index()] = rest * weights[1] / total;
            f[PhaseGroup::MinorLeft.index()] = rest * weights[2] / total;
            // keep the sum safely inside the cycle after rounding
            f.iter_mut().for_each(|x| *x = (*x * 1e6).floor() / 1e6);
            IntersectionTiming {
                cycle_length_s: cycle,
                offset_s: draw(&mut rng, [0.0, cycle - 1.0]).floor(),
                max_green_fraction: f,
            }
        })
        .collect();
    let behavior = DrivingBehavior {
        free_flow_speed_mps: draw(&mut rng, ranges.free_flow_speed_mps),
        saturation_headway_s: draw(&mut rng, ranges.saturation_headway_s),
        startup_lost_time_s: draw(&mut rng, ranges.startup_lost_time_s),
        speed_factor: draw(&mut rng, ranges.speed_factor),
    };
    let ratios = TurningRatios {
        intersections: (0..k)
            .map(|_| {
                Approach::ALL.map(|a| {
                    if a.is_major() {
                        TurnSplit::new(draw(&mut rng, ranges.major_left_ratio), draw(&mut rng, ranges.major_right_ratio))
                    } else {
                        TurnSplit::new(draw(&mut rng, ranges.minor_turn_ratio), draw(&mut rng, ranges.minor_turn_ratio))
                    }
                })
            })
            .collect(),
    };
    let amplitude = draw(&mut rng, [-ranges.profile_amplitude, ranges.profile_amplitude]);
    let phase = draw(&mut rng, [0.0, std::f64::consts::TAU]);
    let profile: Vec<f64> = (0..ranges.w)
        .map(|t| 1.0 + amplitude * (std::f64::consts::TAU * (t as f64 + 0.5) / ranges.w as f64 + phase).sin())
        .collect();
    let sources = external_approaches(k);
    let mut bases: Vec<f64> = sources
        .iter()
        .map(|&(i, a)| {
            let (vc, clamp) = if a.is_major() {
                (ranges.arterial_vc, ranges.arterial_demand_vph)
            } else {
                (ranges.minor_vc, ranges.minor_demand_vph)
            };
            (draw(&mut rng, vc) * approach_capacity_vph(&geometry, &intersections, &behavior, &ratios, i, a))
                .clamp(clamp[0], clamp[1])
        })
        .collect();
    let scale = turn_in_scale(&geometry, &intersections, &behavior, &ratios, &sources, &bases, ranges.arterial_vc[1]);
    for (b, &(_, a)) in bases.iter_mut().zip(&sources) {
        if !a.is_major() {
            *b = (*b * scale).clamp(ranges.minor_demand_vph[0], ranges.minor_demand_vph[1]);
        }
    }
    let demand = sources
        .into_iter()
        .zip(bases)
        .map(|((i, a), base)| DemandSource {
            intersection: i,
            approach: a,
            rates_vph: profile
                .iter()
                .map(|m| (base * m).clamp(ranges.demand_clamp_vph[0], ranges.demand_clamp_vph[1]))
                .collect(),
        })
        .collect();
    let scenario = Scenario {
        seed,
        w: ranges.w,
        interval_s: ranges.interval_s,
        geometry,
        signals: SignalPlan { intersections },
        behavior,
        ratios,
        demand,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn lane_group_capacity_vph(geometry: &CorridorGeometry, timing: &IntersectionTiming, behavior: &DrivingBehavior, phase: Phase) -> f64 {
    let green = timing.max_green_fraction[phase.group().index()] * timing.cycle_length_s;
    let effective = (green - behavior.startup_lost_time_s).max(0.0) / timing.cycle_length_s;
    geometry.lanes(phase) as f64 / behavior.saturation_headway_s * effective * 3600.0
}

/// Demand an approach can carry before one of its lane groups saturates.
/// Arterial entries are limited by the tightest through movement along
/// the corridor in their direction.
fn approach_capacity_vph(
    geometry: &CorridorGeometry,
    timings: &[IntersectionTiming],
    behavior: &DrivingBehavior,
    ratios: &TurningRatios,
    intersection: usize,
    approach: Approach,
) -> f64 {
    let limit = |i: usize, a: Approach| {
        let split = ratios.split(i, a);
        let through = lane_group_capacity_vph(geometry, &timings[i], behavior, a.through_phase())
            / (split.through + split.right).max(1e-6);
        let left = lane_group_capacity_vph(geometry, &timings[i], behavior, a.left_phase()) / split.left.max(1e-6);
        through.min(left)
    };
    if approach.is_major() {
        (0..geometry.k).map(|i| limit(i, approach)).fold(f64::INFINITY, f64::min)
    } else {
        limit(intersection, approach)
    }
}

/// Largest factor on minor-street demand that keeps the expected arterial
/// through load at or below `max_vc` of capacity at every intersection.
/// Cross-street vehicles turning onto the arterial accumulate downstream.
fn turn_in_scale(
    geometry: &CorridorGeometry,
    timings: &[IntersectionTiming],
    behavior: &DrivingBehavior,
    ratios: &TurningRatios,
    sources: &[(usize, Approach)],
    bases: &[f64],
    max_vc: f64,
) -> f64 {
    let k = geometry.k;
    let rate = |i: usize, a: Approach| {
        sources
            .iter()
            .zip(bases)
            .find(|(&(j, b), _)| j == i && b == a)
            .map_or(0.0, |(_, &r)| r)
    };
    let mut scale: f64 = 1.0;
    for dir in [Approach::Eastbound, Approach::Westbound] {
        let order: Vec<usize> = if dir == Approach::Eastbound { (0..k).collect() } else { (0..k).rev().collect() };
        // expected arriving flow split into entry-derived and turn-in parts
        let (mut entry, mut turned) = (rate(order[0], dir), 0.0);
        for &i in &order {
            let split = ratios.split(i, dir);
            let cap = lane_group_capacity_vph(geometry, &timings[i], behavior, dir.through_phase());
            let share = split.through + split.right;
            let (e, t) = (entry * share, turned * share);
            if t > 0.0 {
                scale = scale.min(((max_vc * cap - e) / t).max(0.0));
            }
            let (nb, sb) = (ratios.split(i, Approach::Northbound), ratios.split(i, Approach::Southbound));
            let joining = if dir == Approach::Eastbound {
                rate(i, Approach::Northbound) * nb.right + rate(i, Approach::Southbound) * sb.left
            } else {
                rate(i, Approach::Northbound) * nb.left + rate(i, Approach::Southbound) * sb.right
            };
            entry *= split.through;
            turned = turned * split.through + joining;
        }
    }
    scale
}
