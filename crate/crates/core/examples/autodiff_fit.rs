//! Fits a two-layer MLP to a noisy sine with the tape and Adam, then
//! checks its gradients against central differences.

use corridor_twin::autodiff::gradcheck::{check_with_params, DEFAULT_STEP};
use corridor_twin::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use corridor_twin::layers::{Activation, DenseLayer, MlpBlock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> corridor_twin::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..64).map(|i| i as f64 / 64.0 * 6.0 - 3.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin() + rng.random_range(-0.05..0.05)).collect();
    let x = Tensor::new(vec![64, 1], xs)?;
    let y = Tensor::new(vec![64, 1], ys)?;

    let mut store = ParamStore::new();
    // linear output so the fit can go negative
    let mlp = MlpBlock::from_layers(vec![
        DenseLayer::new(&mut store, "hidden", 1, 32, Activation::Relu, &mut rng),
        DenseLayer::new(&mut store, "out", 32, 1, Activation::None, &mut rng),
    ])?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(1e-2), &store)?;

    for step in 0..=1500 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pred = mlp.forward(&mut tape, &store, xv)?;
        let loss = tape.mse_loss(pred, yv)?;
        if step % 300 == 0 {
            println!("step {step:>4}  mse {:.5}", tape.value(loss).item());
        }
        tape.backward(loss)?;
        tape.accumulate_param_grads(&mut store);
        adam.step(&mut store)?;
    }

    let sample = Tensor::new(vec![4, 1], vec![-2.0, -0.5, 0.7, 2.5])?;
    let report = check_with_params(
        &mut store,
        &[sample],
        |tape, params, v| {
            let out = mlp.forward(tape, params, v[0])?;
            tape.sum_all(out)
        },
        DEFAULT_STEP,
    )?;
    println!("gradient check over {} entries: relative error {:.2e}", report.entries, report.relative_error);
    Ok(())
}
