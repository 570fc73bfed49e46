//! Runs an INT8 conv through im2col + GEMM + rescale and checks it against a
//! direct convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pusim::functional::{run_layer, BiasVector, LayerParams, QTensor, WeightMatrix};
use pusim::oracle::conv_naive;
use pusim::workload::{conv_to_gemm, LayerSpec};

fn main() -> pusim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let layer = LayerSpec::conv(0, 3, 1, 1, 8, 16, 10).with_relu().with_shifts(6, 2, 8);
    let shape = conv_to_gemm(&layer)?;

    let x = QTensor::new(10, 10, 8, (0..800).map(|_| rng.random()).collect(), 4)?;
    let params = LayerParams {
        weights: WeightMatrix::new(shape.n, shape.m, (0..shape.n * shape.m).map(|_| rng.random_range(-64..64)).collect(), 6)?,
        bias: BiasVector {
            values: (0..shape.n).map(|_| rng.random_range(-8..8)).collect(),
            shift: 2,
        },
    };

    let y = run_layer(&layer, &x, Some(&params), None)?;
    let reference = conv_naive(&x, &layer, &params);
    println!("output {:?}, scale 2^-{}", y.shape(), y.shift);
    println!("first pixel: {:?}", &y.data[..16]);
    println!("matches direct convolution: {}", y == reference);
    Ok(())
}
