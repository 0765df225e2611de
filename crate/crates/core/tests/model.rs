mod common;

use common::{module_gradient_errors, toy_model, toy_records};
use corridor_twin::autodiff::{Tape, Tensor};
use corridor_twin::corridor::{build_dynamic_graph, NUM_PHASES};
use corridor_twin::model::*;
use corridor_twin::Error;
use proptest::prelude::*;

fn bits(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn unmasked_inputs_pass_through_unchanged() {
    let recs = toy_records(4, 4, 2, 1);
    let model = toy_model(&recs, 8, 2, 0);
    let mut sample = recs[0].static_graph.clone();
    sample.mask.iter_mut().for_each(|m| *m = false);
    sample.node_features = recs[0].targets.imputed_volumes.clone();
    let out = model.forward_inflow(&sample).unwrap();
    assert_eq!(bits(out.data()), bits(sample.node_features.data()));
}

#[test]
fn zero_head_imputes_zero_and_keeps_observations() {
    let recs = toy_records(5, 4, 2, 2);
    let mut model = toy_model(&recs, 8, 2, 0);
    for p in model.params.iter_mut().filter(|p| p.name.starts_with("inflow.head.")) {
        p.value = Tensor::zeros(p.value.shape());
    }
    let s = &recs[1].static_graph;
    let out = model.forward_inflow(s).unwrap();
    assert!(s.mask.iter().any(|&m| m));
    for (j, &m) in s.mask.iter().enumerate() {
        let expected = if m { 0.0 } else { s.node_features.data()[j] };
        assert_eq!(out.data()[j], expected, "entry {j}");
    }
}

#[test]
fn default_shapes_and_non_negative_heads() {
    let recs = toy_records(8, 10, 1, 3);
    let model = toy_model(&recs, 64, 4, 0);
    let r = &recs[0];
    let imputed = model.forward_inflow(&r.static_graph).unwrap();
    assert_eq!(imputed.shape(), &[8, NUM_PHASES]);
    let dynamic = build_dynamic_graph(&r.static_graph, &imputed, &r.dynamic_inputs).unwrap();
    let (eb, wb, h) = model.forward_travel_time(&dynamic).unwrap();
    assert_eq!((eb.len(), wb.len()), (10, 10));
    assert_eq!(h.shape(), &[8, 64, 10]);
    for stage in [Stage::Queue, Stage::Waiting] {
        let y = model.forward_moe_head(stage, &h).unwrap();
        assert_eq!(y.shape(), &[8, NUM_PHASES, 10]);
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }
    assert!(matches!(
        model.forward_moe_head(Stage::Queue, &Tensor::zeros(&[8, 64, 9])),
        Err(Error::ShapeMismatch { .. })
    ));
    let other = &toy_records(4, 10, 1, 4)[0];
    assert!(model.forward_inflow(&other.static_graph).is_err());
}

#[test]
fn predict_composes_the_four_forwards() {
    let recs = toy_records(4, 5, 1, 5);
    let model = toy_model(&recs, 8, 2, 1);
    let r = &recs[0];
    let p = model.predict(&r.static_graph, &r.dynamic_inputs).unwrap();
    let imputed = model.forward_inflow(&r.static_graph).unwrap();
    let dynamic = build_dynamic_graph(&r.static_graph, &imputed, &r.dynamic_inputs).unwrap();
    let (eb, wb, h) = model.forward_travel_time(&dynamic).unwrap();
    assert_eq!(p.imputed_volumes, imputed);
    assert_eq!((p.travel_time_eb.clone(), p.travel_time_wb.clone()), (eb, wb));
    assert_eq!(p.queue_length, model.forward_moe_head(Stage::Queue, &h).unwrap());
    assert_eq!(p.waiting_time, model.forward_moe_head(Stage::Waiting, &h).unwrap());
}

#[test]
fn duplicated_samples_get_identical_outputs() {
    let recs = toy_records(4, 5, 1, 6);
    let model = toy_model(&recs, 8, 2, 2);
    let r = &recs[0];
    let imputed = model.forward_inflow(&r.static_graph).unwrap();
    let d = build_dynamic_graph(&r.static_graph, &imputed, &r.dynamic_inputs).unwrap();
    let mut tape = Tape::new();
    let out = model.travel_batch(&mut tape, &model.params, &[&d, &d, &d]).unwrap();
    for v in [out.eastbound, out.westbound, out.hidden] {
        let data = tape.value(v).data();
        let per = data.len() / 3;
        assert_eq!(bits(&data[..per]), bits(&data[per..2 * per]));
        assert_eq!(bits(&data[..per]), bits(&data[2 * per..]));
    }
}

#[test]
fn free_flow_baseline_matches_scenario_geometry() {
    for r in toy_records(5, 4, 3, 7) {
        let [eb, wb] = free_flow_times(&r.static_graph.topology, &r.static_graph.edge_features).unwrap();
        let ff = r.scenario.free_flow_travel_time_s();
        assert!((eb - ff).abs() < 1e-9 && (wb - ff).abs() < 1e-9);
    }
}

#[test]
fn module_gradients_match_finite_differences() {
    for seed in 0..3 {
        for (module, err) in module_gradient_errors(seed) {
            assert!(err <= 1e-4, "{module} seed {seed}: {err}");
        }
    }
}

fn small_config(epochs: [usize; 4]) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            k: 4,
            w: 4,
            hidden: 8,
            heads: 2,
            ..ModelConfig::default()
        },
        stage_epochs: epochs,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_samples_are_memorized() {
    let one = toy_records(8, 10, 1, 8).remove(0);
    let recs = vec![one; 20];
    let cfg = TrainConfig {
        stage_epochs: [200, 0, 0, 0],
        batch_size: 1,
        ..TrainConfig::default()
    };
    let mut best = f64::INFINITY;
    train_sequential_with(&recs, &cfg, |e| {
        if e.stage == Stage::Inflow {
            best = best.min(e.train_loss);
        }
    })
    .unwrap();
    assert!(best <= 1e-6, "best stage-1 loss {best}");
}

#[test]
fn later_stages_never_touch_earlier_modules() {
    let recs = toy_records(4, 4, 24, 9);
    let full = train_sequential(&recs, &small_config([3, 3, 3, 3])).unwrap().model;
    for (done, prefix) in [(1, "inflow."), (2, "travel."), (3, "queue.")] {
        let mut epochs = [3, 3, 3, 3];
        epochs[done..].iter_mut().for_each(|e| *e = 0);
        let partial = train_sequential(&recs, &small_config(epochs)).unwrap().model;
        for (a, b) in full.params.iter().zip(partial.params.iter()) {
            if a.name.starts_with(prefix) {
                assert_eq!(bits(a.value.data()), bits(b.value.data()), "{} changed after its stage", a.name);
            }
        }
    }
}

#[test]
fn validation_curves_and_split() {
    let recs = toy_records(4, 4, 24, 10);
    let out = train_sequential(&recs, &small_config([4, 4, 4, 4])).unwrap();
    let m = &out.metadata;
    assert_eq!(m.curves.len(), 4);
    for c in &m.curves {
        assert_eq!(c.validation_loss.len(), 4);
        assert!(c.best_validation.windows(2).all(|w| w[1] <= w[0]));
        let best = c.best_epoch.unwrap();
        assert_eq!(c.validation_loss[best], *c.best_validation.last().unwrap());
    }
    let s = &m.split;
    let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
    all.sort();
    assert_eq!(all, (0..24).collect::<Vec<_>>());
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (17, 4, 3));

    assert!(split_indices(2, [0.7, 0.15, 0.15], 0).is_err());
    assert!(train_sequential(&recs[..2], &small_config([1, 1, 1, 1])).is_err());
    assert!(train_sequential(&[], &small_config([1, 1, 1, 1])).is_err());
}

#[test]
fn shared_head_optimizer_trains_both_heads_in_one_stage() {
    let recs = toy_records(4, 4, 16, 11);
    let mut cfg = small_config([2, 2, 3, 3]);
    cfg.shared_moe_optimizer = true;
    let out = train_sequential(&recs, &cfg).unwrap();
    assert_eq!(out.metadata.curves[2].train_loss.len(), 3);
    assert!(out.metadata.curves[3].train_loss.is_empty());
}

#[test]
fn parallel_prediction_is_bitwise_sequential() {
    let recs = toy_records(4, 4, 12, 12);
    let model = toy_model(&recs, 8, 2, 3);
    let mut inputs: Vec<_> = recs
        .iter()
        .map(|r| InferenceInput {
            static_graph: &r.static_graph,
            dynamic_inputs: &r.dynamic_inputs,
        })
        .collect();
    let other = toy_records(5, 4, 1, 13);
    inputs.insert(4, InferenceInput {
        static_graph: &other[0].static_graph,
        dynamic_inputs: &other[0].dynamic_inputs,
    });
    let one = predict_batch(&model, &inputs, 1).unwrap();
    let eight = predict_batch(&model, &inputs, 8).unwrap();
    assert_eq!(one.failed, vec![4]);
    assert_eq!(eight.failed, vec![4]);
    for (a, b) in one.results.iter().zip(&eight.results) {
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(serde_json::to_string(a).unwrap(), serde_json::to_string(b).unwrap()),
            (Err(_), Err(_)) => {}
            _ => panic!("outcome differs across parallelism"),
        }
    }
    assert!(predict_batch(&model, &inputs, 0).is_err());
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let recs = toy_records(8, 4, 12, 14);
    let mut cfg = small_config([1, 1, 1, 1]);
    cfg.model.k = 8;
    let out = train_sequential(&recs, &cfg).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &out.model, Some(&out.metadata)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.version, CHECKPOINT_VERSION);
    assert_eq!(ck.training.as_ref(), Some(&out.metadata));
    let back = ck.clone().into_model().unwrap();
    assert!(back.params.bitwise_eq(&out.model.params));
    assert_eq!(back.norm, out.model.norm);

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(Error::CheckpointCorrupt(_))));
    let mut flipped = bytes.clone();
    let mid = flipped.len() - 100;
    flipped[mid] ^= 1;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::CheckpointCorrupt(_))));
    let mut future = bytes.clone();
    future[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&future), Err(Error::CheckpointVersion { found: 2, .. })));

    let mut small = ck.model_config.clone();
    small.k = 4;
    match ck.into_model_with(small) {
        Err(Error::CheckpointShape { name, expected, found }) => {
            assert_eq!(name, "inflow.position");
            assert_eq!((expected[0], found[0]), (4, 8));
        }
        other => panic!("expected a shape error, got {:?}", other.map(|_| ())),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_shapes_hold_for_small_configs(k in 2usize..6, w in 3usize..7, heads in 1usize..3, seed in 0u64..1000) {
        let recs = toy_records(k, w, 1, seed);
        let model = toy_model(&recs, 4 * heads, heads, seed);
        let p = model.predict(&recs[0].static_graph, &recs[0].dynamic_inputs).unwrap();
        prop_assert_eq!(p.imputed_volumes.shape(), &[k, NUM_PHASES]);
        prop_assert_eq!((p.travel_time_eb.len(), p.travel_time_wb.len()), (w, w));
        prop_assert_eq!(p.queue_length.shape(), &[k, NUM_PHASES, w]);
        prop_assert_eq!(p.waiting_time.shape(), &[k, NUM_PHASES, w]);
        prop_assert!(p.queue_length.data().iter().chain(p.waiting_time.data()).all(|&v| v >= 0.0));
        for (j, &m) in recs[0].static_graph.mask.iter().enumerate() {
            if !m {
                prop_assert_eq!(p.imputed_volumes.data()[j], recs[0].static_graph.node_features.data()[j]);
            }
        }
    }
}
