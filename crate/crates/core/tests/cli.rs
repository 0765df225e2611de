use std::path::Path;
use std::process::Command;

use corridor_twin::cli::{run, CliError, RunManifest};
use corridor_twin::eval::SubgroupReport;

const BIN: &str = env!("CARGO_BIN_EXE_corridor-twin");

fn args(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn generate(dir: &Path, name: &str, n: usize) -> std::path::PathBuf {
    let out = dir.join(name);
    run(args(&format!(
        "generate --n {n} --seed 5 --ranges.k 4 --ranges.w 4 --parallelism 2 --out {}",
        out.display()
    )))
    .unwrap();
    out
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_TRAIN: &str =
    "--model.k 4 --model.w 4 --model.hidden 8 --model.heads 2 --set stage_epochs=[2,2,2,2] --set batch_size=4 --parallelism 1";

#[test]
fn generation_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.jsonl", 6);
    let b = generate(dir.path(), "b.jsonl", 6);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 6);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["n"], 6);
    assert_eq!(m["seed"], 5);
}

#[test]
fn train_eval_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "data.jsonl", 16);
    let ckpt = dir.path().join("m.ckpt");
    run(args(&format!("train --data {} --out {} {SMALL_TRAIN}", data.display(), ckpt.display()))).unwrap();
    assert!(ckpt.is_file());
    let curves = std::fs::read_to_string(ckpt.with_extension("loss.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 8);
    let m = manifest(&ckpt.with_extension("run.json"));
    assert_eq!(m.command, "train");
    assert_eq!(m.inputs[0].sha256.len(), 64);
    assert_eq!(m.config["model"]["hidden"], 8);

    let report = dir.path().join("report");
    run(args(&format!("eval --data {} --model {} --out {} --all", data.display(), ckpt.display(), report.display()))).unwrap();
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    let parsed = SubgroupReport::from_csv(&csv).unwrap();
    assert_eq!(parsed.rows.len(), 40);
    assert_eq!(std::fs::read_to_string(report.join("metrics.jsonl")).unwrap().lines().count(), 16);
    assert!(report.join("charts").read_dir().unwrap().count() > 0);
    assert!(manifest(&report.join("run.json")).outputs.len() > 2);

    let preds = dir.path().join("p.jsonl");
    run(args(&format!("infer --data {} --model {} --out {} --parallelism 3", data.display(), ckpt.display(), preds.display()))).unwrap();
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 16);
    assert!(lines.iter().all(|l| l.get("prediction").is_some()));

    let text = std::fs::read_to_string(&data).unwrap();
    let five = dir.path().join("mixed.jsonl");
    let other = dir.path().join("other.jsonl");
    run(args(&format!("generate --n 1 --seed 9 --ranges.k 5 --ranges.w 4 --out {}", other.display()))).unwrap();
    std::fs::write(&five, text + &std::fs::read_to_string(&other).unwrap()).unwrap();
    let status = Command::new(BIN)
        .args(args(&format!("infer --data {} --model {} --out {}", five.display(), ckpt.display(), dir.path().join("q.jsonl").display())))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let partial = std::fs::read_to_string(dir.path().join("q.jsonl")).unwrap();
    assert_eq!(partial.lines().filter(|l| l.contains("\"error\"")).count(), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    for line in [
        "frobnicate".to_owned(),
        format!("train --data {}", missing.display()),
        "generate --n 1 --parallelism 0".to_owned(),
        "generate --n 1 --ranges.k 1".to_owned(),
    ] {
        let out = Command::new(BIN).current_dir(dir.path()).args(args(&line)).output().unwrap();
        assert_eq!(out.status.code(), Some(1), "{line}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let help = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn unknown_override_names_the_field() {
    match run(args("generate --n 1 --ranges.lanes 3")) {
        Err(e @ CliError::Usage(_)) => {
            assert_eq!(e.exit_code(), 1);
            assert!(e.to_string().contains("ranges.lanes"), "{e}");
        }
        other => panic!("expected a usage error, got {other:?}"),
    }
    let e = run(args("generate --n 1 --set sim.bogus=1")).unwrap_err();
    assert!(e.to_string().contains("sim.bogus"), "{e}");
}

#[test]
fn thread_count_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let status = Command::new(BIN)
        .env("CORRIDOR_TWIN_THREADS", "3")
        .args(args(&format!("generate --n 2 --ranges.k 4 --ranges.w 4 --out {}", data.display())))
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = dir.path().join("m.ckpt");
    let status = Command::new(BIN)
        .env("CORRIDOR_TWIN_THREADS", "3")
        .args(args(&format!("bench --n 2 --ranges.k 4 --ranges.w 4 --out {}", dir.path().join("b.json").display())))
        .status()
        .unwrap();
    assert!(status.success());
    let bench: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(bench["parallelism"], 3);
    assert_eq!(bench["identical_outputs"], true);
    let bad = Command::new(BIN)
        .env("CORRIDOR_TWIN_THREADS", "many")
        .args(args(&format!("train --data {} --out {}", data.display(), ckpt.display())))
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
}
