//! Generates a small dataset, trains the four modules in sequence,
//! round-trips the checkpoint and writes the subgroup report.
//!
//! `cargo run --release --example train_and_evaluate -- [scenarios] [out_dir]`

use std::path::PathBuf;

use corridor_twin::eval::{evaluate_and_report, EvalOptions, Moe};
use corridor_twin::model::{load_checkpoint, save_checkpoint, train_sequential_with, TrainConfig};
use corridor_twin::oracle::{generate_records, SamplingRanges, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(128);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "twin_example".into()));
    std::fs::create_dir_all(&out)?;

    let records = generate_records(n, 0, &SamplingRanges::default(), &SimConfig::default(), 4)?;
    let config = TrainConfig {
        stage_epochs: [30, 30, 20, 20],
        ..TrainConfig::default()
    };
    let outcome = train_sequential_with(&records, &config, |e| {
        if e.epoch % 10 == 0 {
            println!("{:>11} {:>3}  train {:.4}  validation {:.4}", e.stage.name(), e.epoch, e.train_loss, e.validation_loss);
        }
    })?;

    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.model, Some(&outcome.metadata))?;
    let model = load_checkpoint(&ckpt)?.into_model()?;

    let test: Vec<_> = outcome.metadata.split.test.iter().map(|&i| &records[i]).collect();
    let evaluation = evaluate_and_report(&model, &test, &out, &EvalOptions::default())?;
    for moe in Moe::ALL {
        if let Some(row) = evaluation.report.total(moe) {
            println!("{:<20} nrmse {:?}", moe.name(), row.values.nrmse);
        }
    }
    println!("wrote {} files under {}", evaluation.files.len(), out.display());
    Ok(())
}
