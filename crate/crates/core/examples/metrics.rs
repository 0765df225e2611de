//! Scores a predicted series against a reference with every metric in the
//! report.

use corridor_twin::eval::Metric;

fn main() {
    let truth = [120.0, 135.0, 180.0, 240.0, 210.0, 160.0, 130.0, 125.0];
    let pred = [118.0, 140.0, 170.0, 225.0, 220.0, 150.0, 135.0, 128.0];
    for m in Metric::ALL {
        match m.compute(&truth, &pred) {
            Ok(v) => println!("{:<6} {v:.4}", m.name()),
            Err(e) => println!("{:<6} undefined ({e})", m.name()),
        }
    }
    // a flat reference has no range to normalise by
    println!("{:?}", Metric::Nrmse.compute(&[5.0; 4], &[4.0, 5.0, 6.0, 5.0]).err());
}
