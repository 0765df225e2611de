use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ArrivalMode, SimConfig};
use super::events::{Event, EventKind, StoplineVisit, VehicleRecord};
use crate::autodiff::Tensor;
use crate::corridor::{
    Approach, DetectorRecord, OracleOutputs, Phase, Scenario, TargetBundle, TurnSplit, NUM_PHASES, NUM_PHASE_GROUPS,
};
use crate::error::Result;

/// Result of one oracle run.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub outputs: OracleOutputs,
    /// Time-ordered; empty unless `SimConfig::record_events` is set.
    pub events: Vec<Event>,
    pub vehicles: Vec<VehicleRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Turn {
    Left,
    Through,
    Right,
}

fn heading_after(a: Approach, turn: Turn) -> Approach {
    use Approach::*;
    match (a, turn) {
        (_, Turn::Through) => a,
        (Eastbound, Turn::Left) | (Westbound, Turn::Right) => Northbound,
        (Eastbound, Turn::Right) | (Westbound, Turn::Left) => Southbound,
        (Northbound, Turn::Left) | (Southbound, Turn::Right) => Westbound,
        (Northbound, Turn::Right) | (Southbound, Turn::Left) => Eastbound,
    }
}

fn draw_turn(rng: &mut ChaCha8Rng, split: TurnSplit) -> Turn {
    let u: f64 = rng.random();
    if u < split.left {
        Turn::Left
    } else if u < split.left + split.through {
        Turn::Through
    } else {
        Turn::Right
    }
}

fn phase_for(a: Approach, turn: Turn) -> Phase {
    if turn == Turn::Left {
        a.left_phase()
    } else {
        a.through_phase()
    }
}

/// Inverse-CDF Poisson draw from a single uniform, so the count never
/// decreases when the mean grows and the stream stays aligned.
fn poisson_from_uniform(u: f64, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let mut n = 0;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && n < 10_000 {
        n += 1;
        p *= mean / n as f64;
        cdf += p;
    }
    n
}

#[derive(Clone, Copy, Debug)]
struct Transit {
    vehicle: u32,
    arrival_s: f64,
    turn: Turn,
}

#[derive(Clone, Copy, Debug)]
struct Queued {
    vehicle: u32,
    arrival_s: f64,
    turn: Turn,
}

struct Link {
    length_m: f64,
    downstream: usize,
    heading: Approach,
    transit: VecDeque<Transit>,
}

impl Link {
    fn push(&mut self, t: Transit) {
        let pos = self
            .transit
            .iter()
            .rposition(|x| x.arrival_s <= t.arrival_s)
            .map_or(0, |p| p + 1);
        self.transit.insert(pos, t);
    }
}

struct Window {
    start: f64,
    end: f64,
    interval: f64,
    w: usize,
}

impl Window {
    fn slot(&self, t: f64) -> Option<usize> {
        (t >= self.start && t < self.end).then(|| (((t - self.start) / self.interval) as usize).min(self.w - 1))
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    cfg: &'a SimConfig,
    k: usize,
    speed: f64,
    window: Window,
    links: Vec<Link>,
    num_sources: usize,
    queues: Vec<VecDeque<Queued>>,
    credit: Vec<f64>,
    /// Discharge window per intersection and phase group, in cycle seconds.
    greens: Vec<[Option<(f64, f64)>; NUM_PHASE_GROUPS]>,
    turn_rngs: Vec<ChaCha8Rng>,
    vehicles: Vec<VehicleRecord>,
    events: Vec<Event>,
    in_network: usize,
    detector: Vec<Vec<f64>>,
    queue_max: Vec<Vec<f64>>,
    wait_sum: Vec<Vec<f64>>,
    wait_n: Vec<Vec<usize>>,
    density_sum: Vec<Vec<f64>>,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, cfg: &'a SimConfig) -> Self {
        let k = sc.k();
        let w = sc.w;
        let geo = &sc.geometry;
        let mut links: Vec<Link> = sc
            .demand
            .iter()
            .map(|d| Link {
                length_m: geo.detector_setback_m,
                downstream: d.intersection,
                heading: d.approach,
                transit: VecDeque::new(),
            })
            .collect();
        let num_sources = links.len();
        for i in 0..k - 1 {
            links.push(Link {
                length_m: geo.link_length_m[i],
                downstream: i + 1,
                heading: Approach::Eastbound,
                transit: VecDeque::new(),
            });
        }
        for i in (1..k).rev() {
            links.push(Link {
                length_m: geo.link_length_m[i - 1],
                downstream: i - 1,
                heading: Approach::Westbound,
                transit: VecDeque::new(),
            });
        }
        let slots = k * NUM_PHASES;
        let edges = 2 * (k - 1);
        let turn_rngs = (0..k * 4)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(sc.seed);
                r.set_stream(1_000 + s as u64);
                r
            })
            .collect();
        let startup = sc.behavior.startup_lost_time_s;
        let greens = sc
            .signals
            .intersections
            .iter()
            .map(|timing| {
                let mut g = [None; NUM_PHASE_GROUPS];
                for win in timing.green_windows() {
                    g[win.group.index()] = if timing.served_groups() == 1 && win.end_s - win.start_s >= timing.cycle_length_s {
                        Some((f64::NEG_INFINITY, f64::INFINITY))
                    } else {
                        Some((win.start_s + startup, win.end_s))
                    };
                }
                g
            })
            .collect();
        Self {
            sc,
            cfg,
            greens,
            k,
            speed: sc.behavior.travel_speed_mps(),
            window: Window {
                start: cfg.warmup_s,
                end: cfg.horizon_s(w, sc.interval_s),
                interval: sc.interval_s,
                w,
            },
            links,
            num_sources,
            queues: vec![VecDeque::new(); slots],
            credit: vec![0.0; slots],
            turn_rngs,
            vehicles: Vec::new(),
            events: Vec::new(),
            in_network: 0,
            detector: vec![vec![0.0; w]; slots],
            queue_max: vec![vec![0.0; w]; slots],
            wait_sum: vec![vec![0.0; w]; slots],
            wait_n: vec![vec![0; w]; slots],
            density_sum: vec![vec![0.0; w]; edges],
        }
    }

    fn log(&mut self, time_s: f64, kind: EventKind, intersection: usize, phase: Option<Phase>, vehicle: u32) {
        if self.cfg.record_events {
            self.events.push(Event {
                time_s,
                kind,
                intersection,
                phase,
                vehicle,
            });
        }
    }

    /// Internal link leaving `i` with `heading`, if the corridor continues.
    fn internal_link(&self, i: usize, heading: Approach) -> Option<usize> {
        let k = self.k;
        match heading {
            Approach::Eastbound if i + 1 < k => Some(self.num_sources + i),
            Approach::Westbound if i > 0 => Some(self.num_sources + (k - 1) + (k - 1 - i)),
            _ => None,
        }
    }

    /// Puts a vehicle on a link at `t`, choosing its lane group at the
    /// downstream stopline and recording its detector crossing.
    fn enter_link(&mut self, link: usize, vehicle: u32, t: f64, detect_at: f64) {
        let (down, heading, length) = {
            let l = &self.links[link];
            (l.downstream, l.heading, l.length_m)
        };
        let split = self.sc.ratios.split(down, heading);
        let turn = draw_turn(&mut self.turn_rngs[down * 4 + heading.index()], split);
        let phase = phase_for(heading, turn);
        self.log(detect_at, EventKind::Detect, down, Some(phase), vehicle);
        if let Some(s) = self.window.slot(detect_at) {
            self.detector[down * NUM_PHASES + phase.index()][s] += 1.0;
        }
        self.links[link].push(Transit {
            vehicle,
            arrival_s: t + length / self.speed,
            turn,
        });
    }

    fn spawn(&mut self, source: usize, t: f64) {
        let d = &self.sc.demand[source];
        let (i, a) = (d.intersection, d.approach);
        let id = self.vehicles.len() as u32;
        self.vehicles.push(VehicleRecord {
            id,
            origin_intersection: i,
            origin: a,
            entry_s: t,
            visits: Vec::new(),
            exit_s: None,
            corridor_through: false,
        });
        self.in_network += 1;
        self.log(t, EventKind::Enter, i, None, id);
        self.enter_link(source, id, t, t);
    }

    fn effective_green(&self, i: usize, phase: Phase, t: f64) -> bool {
        self.greens[i][phase.group().index()].is_some_and(|(start, end)| {
            let pos = self.sc.signals.intersections[i].cycle_position(t);
            pos >= start && pos < end
        })
    }

    fn depart(&mut self, i: usize, phase: Phase, q: Queued, dep: f64) {
        let slot = i * NUM_PHASES + phase.index();
        self.log(dep, EventKind::Depart, i, Some(phase), q.vehicle);
        self.vehicles[q.vehicle as usize].visits.push(StoplineVisit {
            intersection: i,
            phase,
            arrival_s: q.arrival_s,
            departure_s: dep,
        });
        if let Some(s) = self.window.slot(dep) {
            self.wait_sum[slot][s] += dep - q.arrival_s;
            self.wait_n[slot][s] += 1;
        }
        let heading = heading_after(phase.approach(), q.turn);
        match self.internal_link(i, heading) {
            Some(link) => {
                let setback = self.sc.geometry.detector_setback_m;
                let detect_at = dep + (self.links[link].length_m - setback) / self.speed;
                self.enter_link(link, q.vehicle, dep, detect_at);
            }
            None => {
                self.log(dep, EventKind::Exit, i, Some(phase), q.vehicle);
                let k = self.k;
                let v = &mut self.vehicles[q.vehicle as usize];
                v.exit_s = Some(dep);
                v.corridor_through = match (v.origin, heading) {
                    (Approach::Eastbound, Approach::Eastbound) => v.origin_intersection == 0 && i == k - 1,
                    (Approach::Westbound, Approach::Westbound) => v.origin_intersection == k - 1 && i == 0,
                    _ => false,
                };
                self.in_network -= 1;
            }
        }
    }

    fn run(mut self) -> Result<Simulation> {
        let dt = self.cfg.time_step_s;
        let horizon = self.window.end;
        let stop = horizon + self.cfg.drain_cap_s;
        let mut arrival_rngs: Vec<ChaCha8Rng> = (0..self.num_sources)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(self.sc.seed);
                r.set_stream(s as u64);
                r
            })
            .collect();
        let mut fluid = vec![0.0; self.num_sources];
        let rates: Vec<f64> = Phase::ALL
            .iter()
            .map(|&p| self.sc.geometry.lanes(p) as f64 / self.sc.behavior.saturation_headway_s)
            .collect();
        let steps_per_interval = (self.window.interval / dt).round();
        let mut step: u64 = 0;
        loop {
            let t0 = step as f64 * dt;
            let t1 = t0 + dt;
            if t0 >= stop || (t0 >= horizon && self.in_network == 0) {
                break;
            }
            if t0 < horizon {
                let interval = if t0 < self.window.start {
                    0
                } else {
                    (((t0 - self.window.start) / self.window.interval) as usize).min(self.window.w - 1)
                };
                for s in 0..self.num_sources {
                    let mean = self.sc.demand[s].rates_vph[interval] / 3600.0 * dt;
                    let n = match self.cfg.arrivals {
                        ArrivalMode::Poisson => poisson_from_uniform(arrival_rngs[s].random(), mean),
                        ArrivalMode::Deterministic => {
                            fluid[s] += mean;
                            let n = fluid[s].floor();
                            fluid[s] -= n;
                            n as usize
                        }
                    };
                    for j in 0..n {
                        self.spawn(s, t0 + dt * j as f64 / n as f64);
                    }
                }
            }
            for l in 0..self.links.len() {
                while self.links[l].transit.front().is_some_and(|x| x.arrival_s < t1) {
                    let x = self.links[l].transit.pop_front().expect("front checked");
                    let (down, heading) = (self.links[l].downstream, self.links[l].heading);
                    let phase = phase_for(heading, x.turn);
                    self.log(x.arrival_s, EventKind::Arrive, down, Some(phase), x.vehicle);
                    self.queues[down * NUM_PHASES + phase.index()].push_back(Queued {
                        vehicle: x.vehicle,
                        arrival_s: x.arrival_s,
                        turn: x.turn,
                    });
                }
            }
            for i in 0..self.k {
                for phase in Phase::ALL {
                    let slot = i * NUM_PHASES + phase.index();
                    if !self.effective_green(i, phase, t0) {
                        self.credit[slot] = 0.0;
                        continue;
                    }
                    self.credit[slot] += rates[phase.index()] * dt;
                    while self.credit[slot] >= 1.0 {
                        let Some(q) = self.queues[slot].pop_front() else { break };
                        self.credit[slot] -= 1.0;
                        self.depart(i, phase, q, q.arrival_s.max(t0));
                    }
                    // an idle lane group banks at most one discharge
                    if self.queues[slot].is_empty() {
                        self.credit[slot] = self.credit[slot].min(1.0);
                    }
                }
            }
            if let Some(s) = self.window.slot(t0) {
                for (slot, q) in self.queues.iter().enumerate() {
                    let m = &mut self.queue_max[slot][s];
                    *m = m.max(q.len() as f64);
                }
                for e in 0..self.density_sum.len() {
                    let link = &self.links[self.num_sources + e];
                    let (d, h) = (link.downstream, link.heading);
                    let queued = self.queues[d * NUM_PHASES + h.through_phase().index()].len()
                        + self.queues[d * NUM_PHASES + h.left_phase().index()].len();
                    self.density_sum[e][s] += (link.transit.len() + queued) as f64;
                }
            }
            step += 1;
        }
        self.finish(steps_per_interval)
    }

    fn finish(mut self, steps_per_interval: f64) -> Result<Simulation> {
        let (k, w) = (self.k, self.window.w);
        let free_flow = self.sc.free_flow_travel_time_s();
        let mut tt_sum = [vec![0.0; w], vec![0.0; w]];
        let mut tt_n = [vec![0usize; w], vec![0usize; w]];
        let mut completed = [0usize; 2];
        for v in &self.vehicles {
            let Some(tt) = v.corridor_travel_time_s() else { continue };
            let dir = usize::from(v.origin == Approach::Westbound);
            if let Some(s) = self.window.slot(v.visits[0].departure_s) {
                tt_sum[dir][s] += tt;
                tt_n[dir][s] += 1;
                completed[dir] += 1;
            }
        }
        let tt: Vec<Vec<f64>> = (0..2)
            .map(|d| {
                (0..w)
                    .map(|s| if tt_n[d][s] > 0 { tt_sum[d][s] / tt_n[d][s] as f64 } else { free_flow })
                    .collect()
            })
            .collect();
        let slots = k * NUM_PHASES;
        let waiting: Vec<f64> = (0..slots)
            .flat_map(|slot| {
                let (sum, n) = (&self.wait_sum[slot], &self.wait_n[slot]);
                (0..w).map(move |s| if n[s] > 0 { sum[s] / n[s] as f64 } else { 0.0 })
            })
            .collect();
        let totals: Vec<f64> = self.detector.iter().map(|c| c.iter().sum()).collect();
        let edges = self.density_sum.len();
        let density: Vec<f64> = (0..edges)
            .flat_map(|e| {
                let km = self.links[self.num_sources + e].length_m / 1000.0;
                let sums = &self.density_sum[e];
                (0..w).map(move |s| sums[s] / steps_per_interval / km)
            })
            .collect();
        let detectors = (0..slots)
            .map(|slot| DetectorRecord {
                intersection: slot / NUM_PHASES,
                phase: Phase::ALL[slot % NUM_PHASES],
                counts: std::mem::take(&mut self.detector[slot]),
            })
            .collect();
        let targets = TargetBundle {
            imputed_volumes: Tensor::new(vec![k, NUM_PHASES], totals)?,
            travel_time_eb: tt[0].clone(),
            travel_time_wb: tt[1].clone(),
            queue_length: Tensor::new(vec![k, NUM_PHASES, w], self.queue_max.concat())?,
            waiting_time: Tensor::new(vec![k, NUM_PHASES, w], waiting)?,
        };
        self.events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        Ok(Simulation {
            outputs: OracleOutputs {
                detectors,
                link_density: Tensor::new(vec![edges, w], density)?,
                targets,
                completed_trips: completed,
            },
            events: self.events,
            vehicles: self.vehicles,
        })
    }
}

pub fn simulate_scenario(scenario: &Scenario, config: &SimConfig) -> Result<Simulation> {
    scenario.validate()?;
    config.validate(scenario.interval_s)?;
    Sim::new(scenario, config).run()
}
