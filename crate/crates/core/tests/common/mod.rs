#![allow(dead_code)]

use corridor_twin::corridor::*;

/// Uniform corridor with pure-through arterial movements and the given
/// green fractions everywhere. Demand is zero until set.
pub fn corridor(k: usize, link_m: f64, cycle_s: f64, greens: [f64; NUM_PHASE_GROUPS], w: usize) -> Scenario {
    let through = TurnSplit::new(0.0, 0.0);
    Scenario {
        seed: 7,
        w,
        interval_s: 300.0,
        geometry: CorridorGeometry {
            k,
            link_length_m: vec![link_m; k - 1],
            lanes_per_movement: 2,
            detector_setback_m: 500.0,
        },
        signals: SignalPlan {
            intersections: vec![
                IntersectionTiming {
                    cycle_length_s: cycle_s,
                    offset_s: 0.0,
                    max_green_fraction: greens,
                };
                k
            ],
        },
        behavior: DrivingBehavior {
            free_flow_speed_mps: 15.0,
            saturation_headway_s: 2.0,
            startup_lost_time_s: 2.0,
            speed_factor: 1.0,
        },
        ratios: TurningRatios {
            intersections: vec![[through, through, TurnSplit::new(0.2, 0.2), TurnSplit::new(0.2, 0.2)]; k],
        },
        demand: external_approaches(k)
            .into_iter()
            .map(|(intersection, approach)| DemandSource {
                intersection,
                approach,
                rates_vph: vec![0.0; w],
            })
            .collect(),
    }
}

pub fn set_demand(sc: &mut Scenario, intersection: usize, approach: Approach, vph: f64) {
    let d = sc
        .demand
        .iter_mut()
        .find(|d| d.intersection == intersection && d.approach == approach)
        .expect("external approach");
    d.rates_vph.iter_mut().for_each(|r| *r = vph);
}

/// Green fractions indexed by `PhaseGroup::index`.
pub fn greens(major_through: f64, major_left: f64, minor_through: f64, minor_left: f64) -> [f64; NUM_PHASE_GROUPS] {
    let mut g = [0.0; NUM_PHASE_GROUPS];
    g[PhaseGroup::MajorThrough.index()] = major_through;
    g[PhaseGroup::MajorLeft.index()] = major_left;
    g[PhaseGroup::MinorThrough.index()] = minor_through;
    g[PhaseGroup::MinorLeft.index()] = minor_left;
    g
}

/// Oracle records on short intervals, cheap enough for unit-scale tests.
pub fn toy_records(k: usize, w: usize, n: usize, seed: u64) -> Vec<ScenarioRecord> {
    use corridor_twin::oracle::{generate_records, SamplingRanges, SimConfig};
    let ranges = SamplingRanges {
        k,
        w,
        interval_s: 120.0,
        ..SamplingRanges::default()
    };
    let sim = SimConfig {
        warmup_s: 300.0,
        ..SimConfig::default()
    };
    generate_records(n, seed, &ranges, &sim, 1).expect("toy records")
}

/// Small model with statistics fitted on `records`.
pub fn toy_model(records: &[ScenarioRecord], hidden: usize, heads: usize, init_seed: u64) -> corridor_twin::model::TwinModel {
    use corridor_twin::model::{ModelConfig, Normalization, TwinModel};
    let first = &records[0].scenario;
    let config = ModelConfig {
        k: first.k(),
        w: first.w,
        hidden,
        heads,
        init_seed,
        ..ModelConfig::default()
    };
    let norm = Normalization::fit(&records.iter().collect::<Vec<_>>()).expect("fit");
    TwinModel::new(config, norm).expect("model")
}

fn sum_squares(tape: &mut corridor_twin::autodiff::Tape, v: corridor_twin::autodiff::Var) -> corridor_twin::Result<corridor_twin::autodiff::Var> {
    let sq = tape.mul(v, v)?;
    tape.sum_all(sq)
}

/// Finite-difference relative error of each module at k=3, w=4 over all of
/// its parameters (and the head input).
pub fn module_gradient_errors(seed: u64) -> [(&'static str, f64); 4] {
    use corridor_twin::autodiff::gradcheck::{check_params_where, DEFAULT_STEP};
    use corridor_twin::autodiff::Tensor;
    use corridor_twin::model::Stage;

    let recs = toy_records(3, 4, 2, 100 + seed);
    let model = toy_model(&recs, 8, 2, seed);
    let r = &recs[0];
    let imputed = model.forward_inflow(&r.static_graph).unwrap();
    let d = build_dynamic_graph(&r.static_graph, &imputed, &r.dynamic_inputs).unwrap();
    let hidden = Tensor::new(vec![3, 4, 8], (0..96).map(|i| (i as f64 * 0.37 + seed as f64).sin()).collect()).unwrap();

    let mut store = model.params.clone();
    // zero biases can put a ReLU exactly on its kink
    let mut jitter = 0.0f64;
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| {
            jitter = (jitter * 1.7 + 0.31 + seed as f64).fract();
            *v += 0.2 * jitter - 0.1;
        });
    }
    let inflow = check_params_where(
        &mut store,
        &[],
        |tape, s, _| {
            let z = model.inflow_batch(tape, s, &[&r.static_graph])?;
            sum_squares(tape, z)
        },
        DEFAULT_STEP,
        |name| name.starts_with(Stage::Inflow.prefix()),
    )
    .unwrap();
    let travel = check_params_where(
        &mut store,
        &[],
        |tape, s, _| {
            let out = model.travel_batch(tape, s, &[&d])?;
            let a = sum_squares(tape, out.eastbound)?;
            let b = sum_squares(tape, out.westbound)?;
            let c = sum_squares(tape, out.hidden)?;
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        },
        DEFAULT_STEP,
        |name| name.starts_with(Stage::TravelTime.prefix()),
    )
    .unwrap();
    let head = |stage: Stage, store: &mut corridor_twin::autodiff::ParamStore| {
        check_params_where(
            store,
            std::slice::from_ref(&hidden),
            |tape, s, v| {
                let y = model.moe_batch(tape, s, stage, v[0])?;
                sum_squares(tape, y)
            },
            DEFAULT_STEP,
            |name| name.starts_with(stage.prefix()),
        )
        .unwrap()
        .relative_error
    };
    let queue = head(Stage::Queue, &mut store);
    let waiting = head(Stage::Waiting, &mut store);
    [
        ("inflow", inflow.relative_error),
        ("travel_time", travel.relative_error),
        ("queue_head", queue),
        ("waiting_head", waiting),
    ]
}
