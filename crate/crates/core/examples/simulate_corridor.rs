//! Samples one corridor scenario, runs the queue simulator and prints the
//! per-interval measures plus the vehicle conservation check.

use corridor_twin::corridor::Phase;
use corridor_twin::oracle::{sample_scenario, simulate_scenario, verify_conservation, SamplingRanges, SimConfig};

fn main() -> corridor_twin::Result<()> {
    let scenario = sample_scenario(42, &SamplingRanges::default())?;
    let config = SimConfig {
        record_events: true,
        ..SimConfig::default()
    };
    let sim = simulate_scenario(&scenario, &config)?;
    let t = &sim.outputs.targets;
    println!(
        "{} intersections, {} intervals of {} s, free-flow corridor time {:.0} s",
        scenario.k(),
        scenario.w,
        scenario.interval_s,
        scenario.free_flow_travel_time_s()
    );
    println!("completed trips eb/wb: {:?}", sim.outputs.completed_trips);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:6.0}")).collect::<String>();
    println!("travel time eb  {}", fmt(&t.travel_time_eb));
    println!("travel time wb  {}", fmt(&t.travel_time_wb));
    let p = Phase::MajorThroughEb.index();
    let queue: Vec<f64> = (0..scenario.w).map(|s| t.queue_length.at(&[1, p, s])).collect();
    println!("node 1 eb queue {}", fmt(&queue));

    let report = verify_conservation(&sim.events, &sim.vehicles);
    println!(
        "{} vehicles, {} events, balanced: {}",
        sim.vehicles.len(),
        sim.events.len(),
        report.is_balanced()
    );
    Ok(())
}
