//! Shape walk through the temporal convolution, pooling and transposed
//! convolution layers used by the MOE heads.

use corridor_twin::autodiff::{ParamStore, Tape, Tensor};
use corridor_twin::layers::{TemporalConvLayer, TemporalDeconvLayer, TemporalPoolLayer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> corridor_twin::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let conv = TemporalConvLayer::new(&mut store, "conv", 8, 16, 3, 1, 1, &mut rng);
    let pool = TemporalPoolLayer::new(2, 2);
    let up = TemporalDeconvLayer::new(&mut store, "up", 16, 4, 4, 2, &mut rng);

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::uniform(&[2, 8, 10], 1.0, &mut rng));
    println!("input         {:?}", tape.shape(x));
    let h = conv.forward(&mut tape, &store, x)?;
    println!("conv k=3 p=1  {:?}", tape.shape(h));
    let h = pool.forward(&mut tape, h)?;
    println!("maxpool 2/2   {:?}", tape.shape(h));
    let h = up.forward(&mut tape, &store, h)?;
    println!("deconv k=4 s=2 {:?}", tape.shape(h));
    Ok(())
}
