use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_with_params, DEFAULT_STEP};
use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

#[test]
fn relu_zeroes_negatives() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.apply(&Primitive::Relu, &[x]).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn mse_of_identical_inputs_is_zero() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[1.0, 2.0]));
    let l = tape.apply(&Primitive::MseLoss, &[a, b]).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn mse_gradient_is_two_y_over_n() {
    let mut tape = Tape::new();
    let y = tape.variable(t(&[2], &[3.0, 4.0]));
    let z = tape.constant(t(&[2], &[0.0, 0.0]));
    let l = tape.mse_loss(y, z).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(y).unwrap().data(), &[3.0, 4.0]);

    let report = check_inputs(
        &[t(&[2], &[3.0, 4.0])],
        |tape, v| {
            let z = tape.constant(Tensor::zeros(&[2]));
            tape.mse_loss(v[0], z)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.relative_error < 1e-8, "{report:?}");
}

#[test]
fn matmul_identity_and_arithmetic() {
    let mut tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[3.0, -1.0, 2.5, 7.0]));
    let p = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(p).data(), tape.value(m).data());

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    for seed in 0..10 {
        for trans_b in [false, true] {
            let a = rand_tensor(&[3, 4], seed);
            let b = if trans_b {
                rand_tensor(&[2, 4], seed + 100)
            } else {
                rand_tensor(&[4, 2], seed + 100)
            };
            let w = rand_tensor(&[3, 2], seed + 200);
            let report = check_inputs(
                &[a, b, w],
                |tape, v| {
                    let c = tape.matmul_ext(v[0], v[1], trans_b)?;
                    let c = tape.mul(c, v[2])?;
                    tape.sum_all(c)
                },
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(report.relative_error <= 1e-4, "seed {seed}: {report:?}");
        }
    }
}

#[test]
fn batched_matmul_gradients() {
    let a = rand_tensor(&[2, 3, 4], 1);
    let b = rand_tensor(&[2, 5, 4], 2);
    let w = rand_tensor(&[2, 3, 5], 3);
    let report = check_inputs(
        &[a, b, w],
        |tape, v| {
            let c = tape.matmul_ext(v[0], v[1], true)?;
            let c = tape.mul(c, v[2])?;
            tape.sum_all(c)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.relative_error <= 1e-4, "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    for c in [-3.0, 0.0, 17.5] {
        let x = tape.constant(t(&[3], &[c, c, c]));
        let y = tape.softmax(x, 0).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    let x = tape.constant(t(&[2], &[1000.0, 1000.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one_and_shift_invariant() {
    let x = rand_tensor(&[4, 5], 9).map(|v| 30.0 * v);
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x.map(|v| v + 123.25));
    let ya = tape.softmax(a, 1).unwrap();
    let yb = tape.softmax(b, 1).unwrap();
    let (va, vb) = (tape.value(ya).clone(), tape.value(yb).clone());
    for r in 0..4 {
        let s: f64 = va.data()[r * 5..(r + 1) * 5].iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(va.data()[r * 5..(r + 1) * 5].iter().all(|&p| p > 0.0));
    }
    assert!(va.max_abs_diff(&vb).unwrap() < 1e-9);
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let l = tape.mul(x, x).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 6.0);

    let mut tape = Tape::new();
    let x = tape.variable(t(&[2], &[-1.0, 2.0]));
    let r = tape.relu(x).unwrap();
    let l = tape.sum_all(r).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_values() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));

    let mut other = Tape::new();
    let y = other.variable(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(y), Err(Error::ForeignTape { .. })));
    assert!(matches!(tape.add(x, y), Err(Error::ForeignTape { .. })));
}

#[test]
fn elementwise_shape_mismatch_names_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    let err = tape.add(a, b).unwrap_err();
    assert!(err.to_string().contains("add"), "{err}");
    assert!(err.to_string().contains("[2]") && err.to_string().contains("[3]"));
    assert!(matches!(tape.reduce_sum(a, 1), Err(Error::AxisOutOfRange { .. })));
}

#[test]
fn dense_relu_mse_chain_matches_finite_differences() {
    for seed in 0..10 {
        let x = rand_tensor(&[4, 3], seed);
        let w = rand_tensor(&[3, 5], seed + 10);
        let b = rand_tensor(&[5], seed + 20);
        let y = rand_tensor(&[4, 5], seed + 30);
        let report = check_inputs(
            &[x, w, b, y],
            |tape, v| {
                let h = tape.matmul(v[0], v[1])?;
                let h = tape.add_broadcast(h, v[2], 1)?;
                let h = tape.relu(h)?;
                tape.mse_loss(h, v[3])
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.relative_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn structural_primitives_match_finite_differences() {
    for seed in 0..10 {
        let a = rand_tensor(&[2, 3, 4], seed);
        let b = rand_tensor(&[2, 2, 4], seed + 1);
        let w = rand_tensor(&[2, 5, 4], seed + 2);
        let report = check_inputs(
            &[a, b, w],
            |tape, v| {
                let c = tape.concat(&[v[0], v[1]], 1)?;
                let c = tape.leaky_relu(c, 0.2)?;
                let c = tape.mul(c, v[2])?;
                let s = tape.slice(c, 2, 1, 2)?;
                let m = tape.reduce_mean(s, 1)?;
                let r = tape.reshape(m, &[4])?;
                let q = tape.softmax(r, 0)?;
                let q = tape.mul(q, r)?;
                let u = tape.reduce_sum(c, 0)?;
                let u = tape.sum_all(u)?;
                let u = tape.scale(u, 0.1)?;
                let q = tape.sum_all(q)?;
                let d = tape.sub(q, u)?;
                tape.mul(d, d)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.relative_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn graph_primitives_match_finite_differences() {
    let src: std::sync::Arc<[usize]> = vec![0, 1, 2, 2, 3, 0].into();
    let dst: std::sync::Arc<[usize]> = vec![1, 1, 0, 3, 3, 2].into();
    for seed in 0..10 {
        let x = rand_tensor(&[4, 3], seed);
        let s = rand_tensor(&[6, 1], seed + 5);
        let target = rand_tensor(&[4, 3], seed + 9);
        let (src, dst) = (src.clone(), dst.clone());
        let report = check_inputs(
            &[x, s, target],
            move |tape, v| {
                let g = tape.gather_rows(v[0], src.clone())?;
                let a = tape.segment_softmax(v[1], dst.clone(), 4)?;
                let m = tape.scale_rows(g, a)?;
                let o = tape.scatter_add_rows(m, dst.clone(), 4)?;
                tape.mse_loss(o, v[2])
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.relative_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn segment_softmax_normalizes_each_segment() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[5], &[1.0, 2.0, 500.0, 501.0, -3.0]));
    let y = tape.segment_softmax(x, vec![0, 0, 1, 1, 2].into(), 3).unwrap();
    let v = tape.value(y).data().to_vec();
    assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    assert!((v[2] + v[3] - 1.0).abs() < 1e-12);
    assert_eq!(v[4], 1.0);
}

#[test]
fn value_used_twice_accumulates_both_branches() {
    let x0 = t(&[3], &[0.5, -1.0, 2.0]);
    let grad_of = |branches: &[bool; 2]| {
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone());
        let mut terms = Vec::new();
        if branches[0] {
            let a = tape.mul(x, x).unwrap();
            terms.push(tape.sum_all(a).unwrap());
        }
        if branches[1] {
            let b = tape.scale(x, 3.0).unwrap();
            terms.push(tape.sum_all(b).unwrap());
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = tape.add(loss, t).unwrap();
        }
        tape.backward(loss).unwrap();
        tape.grad(x).unwrap().clone()
    };
    let both = grad_of(&[true, true]);
    let first = grad_of(&[true, false]);
    let second = grad_of(&[false, true]);
    for i in 0..3 {
        assert_eq!(both.data()[i], first.data()[i] + second.data()[i]);
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = store.add("w", Tensor::glorot(&[6, 4], 6, 4, &mut rng));
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(&[5, 6], 7));
        let wv = tape.param(&store, w);
        let h = tape.matmul(x, wv).unwrap();
        let h = tape.softmax(h, 1).unwrap();
        let l = tape.sum_all(h).unwrap();
        let l = tape.mul(l, l).unwrap();
        tape.backward(l).unwrap();
        tape.accumulate_param_grads(&mut store);
        store.get(w).grad.clone().unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn conv_primitives_match_finite_differences() {
    for seed in 0..10 {
        let x = rand_tensor(&[2, 3, 7], seed);
        let k = rand_tensor(&[4, 3, 3], seed + 1);
        let kt = rand_tensor(&[4, 2, 3], seed + 2);
        let report = check_inputs(
            &[x, k, kt],
            |tape, v| {
                let y = tape.conv1d(v[0], v[1], 2, 1)?;
                let z = tape.conv_transpose1d(y, v[2], 1)?;
                let p = tape.maxpool1d(z, 2, 1)?;
                let p = tape.mul(p, p)?;
                tape.sum_all(p)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.relative_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn param_gradients_flow_into_store() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store.add("w", Tensor::glorot(&[3, 2], 3, 2, &mut rng));
    store.add("b", Tensor::zeros(&[2]));
    let x = rand_tensor(&[4, 3], 11);
    let report = check_with_params(
        &mut store,
        &[x],
        |tape, store, v| {
            let w = tape.param(store, ParamId(0));
            let b = tape.param(store, ParamId(1));
            let h = tape.matmul(v[0], w)?;
            let h = tape.add_broadcast(h, b, 1)?;
            let h = tape.mul(h, h)?;
            tape.sum_all(h)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.relative_error <= 1e-4, "{report:?}");
}

fn quadratic_step(store: &mut ParamStore, adam: &mut Adam, center: f64) {
    let mut tape = Tape::new();
    let theta = tape.param(store, ParamId(0));
    let c = tape.constant(Tensor::scalar(center));
    let d = tape.sub(theta, c).unwrap();
    let l = tape.mul(d, d).unwrap();
    tape.backward(l).unwrap();
    tape.accumulate_param_grads(store);
    adam.step(store).unwrap();
}

#[test]
fn adam_first_step_is_sign_of_gradient() {
    let mut store = ParamStore::new();
    store.add("theta", Tensor::scalar(1.0));
    let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1), &store).unwrap();
    quadratic_step(&mut store, &mut adam, 0.0);
    let theta = store.value(ParamId(0)).item();
    assert!((theta - 0.9).abs() < 1e-8, "{theta}");
    assert!(store.get(ParamId(0)).grad.is_none(), "gradients cleared after step");
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::vector(vec![1.5, -2.0]));
    let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
    store.get_mut(id).grad = Some(Tensor::zeros(&[2]));
    adam.step(&mut store).unwrap();
    assert_eq!(store.value(id).data(), &[1.5, -2.0]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_missing_gradient_names_parameter() {
    let mut store = ParamStore::new();
    store.add("encoder.weight", Tensor::scalar(1.0));
    let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
    match adam.step(&mut store) {
        Err(Error::MissingGradient(name)) => assert_eq!(name, "encoder.weight"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn adam_converges_like_reference_recursion() {
    // Reference scalar recursion, written independently of the optimizer.
    let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=200 {
        let g = 2.0 * (theta - 5.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        theta -= lr * mh / (vh.sqrt() + eps);
    }
    assert!((theta - 5.0).abs() < 0.1, "reference ended at {theta}");

    let mut store = ParamStore::new();
    store.add("theta", Tensor::scalar(1.0));
    let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1), &store).unwrap();
    for _ in 0..200 {
        quadratic_step(&mut store, &mut adam, 5.0);
    }
    let got = store.value(ParamId(0)).item();
    assert!((got - theta).abs() < 1e-12, "{got} vs reference {theta}");
    assert!((got - 5.0).abs() < 0.1);
}
